"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from sqhn.corruption import Corruption, apply
from sqhn.data import PatternBatch, synth_generate, tile, untile
from sqhn.harness import run
from sqhn.inference import fb_sweep, ff_sweep, recall
from sqhn.learning import LearnConfig, train_step, train_stream
from sqhn.metrics import (
    exact_intact_discrete,
    forgetting_oracle,
    recall_accuracy,
    recall_mse,
    theoretical_accuracy,
)
from sqhn.model import Architecture, LayerSpec, build, energy, load_checkpoint, save_checkpoint
from sqhn.recognition import judge

SHAPE = (1, 16, 16)


@pytest.fixture
def verdict(capsys):
    def emit(n, name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[acceptance {n:>2}] {'PASS' if ok else 'FAIL'}  {name}  {detail}")
        assert ok, f"criterion {n} ({name}) failed: {detail}"

    return emit


def _l1(J, n, seed, shape=SHAPE, **kw):
    b = synth_generate({"n": n, "shape": list(shape), "seed": seed, **kw})
    s = build(Architecture.single_layer(shape, J))
    for x in b.x:
        train_step(s, x)
    return s, b


def test_1_capacity(verdict):
    t0 = time.perf_counter()
    s, b = _l1(64, 64, seed=1)
    mses = np.array([recall_mse(x, recall(s, x)) for x in b.x])
    elapsed = time.perf_counter() - t0
    ok = recall_accuracy(mses) == 1.0 and mses.max() < 1e-10 and elapsed < 5
    verdict(1, "capacity", ok, f"acc={recall_accuracy(mses)} max_mse={mses.max():.2e} runtime={elapsed:.2f}s")


def test_2_hetero_association(verdict):
    s, b = _l1(64, 64, seed=1)
    mses = []
    for x in b.x:
        xc, m = apply(x, Corruption("right_mask", frac=0.75), None)
        mses.append(recall_mse(x, recall(s, xc, m), m))
    verdict(2, "hetero-association", max(mses) < 1e-6, f"max_masked_mse={max(mses):.2e}")


def test_3_noise(verdict):
    s, b = _l1(64, 64, seed=1)
    rng = np.random.default_rng(0)
    acc = {}
    for var in (0.2, 0.8):
        c = Corruption("white_noise", var=var)
        acc[var] = recall_accuracy([recall_mse(x, recall(s, apply(x, c, rng)[0])) for x in b.x])
    verdict(3, "auto-association under noise", acc[0.2] == 1.0 and acc[0.8] >= 0.95, f"acc(.2)={acc[0.2]} acc(.8)={acc[0.8]}")


def _orders(n, J, shape, spread, seed):
    rep = run({
        "task": "online-continual",
        "data": {"synthetic": {"n": n, "shape": list(shape), "kind": "clustered", "n_classes": 4, "spread": spread, "seed": seed}},
        "arch": {"J": J},
        "order": "iid",
        "compare_orders": ["oci"],
        "eval_every": 16,
        "seed": seed,
    })
    return rep.metrics["iid"]["C_mse"], rep.metrics["S_mse[iid vs oci]"]


def test_4_order_insensitivity(verdict):
    c_full, s_full = _orders(64, 64, SHAPE, 0.5, seed=3)
    c_over, s_over = _orders(128, 64, (1, 32, 32), 0.5, seed=3)
    ok = s_full < 1e-6 and s_over <= 0.1 * c_over
    verdict(4, "order insensitivity", ok, f"J>=N: S={s_full:.2e} | J<N: S={s_over:.4f} C={c_over:.4f} ratio={s_over / c_over:.3f}")


def test_5_forgetting_law(verdict):
    J, T = 100, 300
    # Arrivals as a unit-rate Poisson stream: the process the exponential law describes exactly.
    curve = forgetting_oracle(J, T, 1000, np.random.default_rng(2024), "poisson")
    oracle_ok = bool(np.all(np.abs(curve.mean - curve.theory) <= 3 * curve.stderr))
    # One write per step follows J (1 - 1/J)^t instead; reported for reference, not part of the verdict.
    disc = forgetting_oracle(J, T, 1000, np.random.default_rng(2025), "discrete")
    disc_gap = float(np.abs(disc.mean - exact_intact_discrete(J, disc.t)).max())

    b = synth_generate({"n": J + T, "shape": list(SHAPE), "seed": 2})
    s = build(Architecture.single_layer(SHAPE, J))
    dev = 0.0
    for i, x in enumerate(b.x):
        train_step(s, x)
        t = i + 1 - J
        if t >= 0 and t % 25 == 0:
            acc = recall_accuracy([recall_mse(y, recall(s, y)) for y in b.x[: i + 1]])
            dev = max(dev, abs(acc - float(theoretical_accuracy(J, t))))
    ok = oracle_ok and dev <= 0.1
    verdict(
        5,
        "forgetting law",
        ok,
        f"oracle max|dev|/se={curve.max_dev_in_se:.2f} e2e max|acc-theory|={dev:.3f} "
        f"(one-write-per-step process: max gap to J e^-t/J {disc.max_dev:.3f}, to its own closed form {disc_gap:.3f})",
    )


def test_6_noisy_encoding(verdict):
    b = synth_generate({"n": 64, "shape": list(SHAPE), "seed": 11})
    rng = np.random.default_rng(0)
    mse, col_err = {}, 0.0
    for k in (1, 50):
        s = build(Architecture.single_layer(SHAPE, 64))
        stream, items = [], []
        for i, x in enumerate(b.x):
            for _ in range(k):
                stream.append(apply(x, Corruption("binary_sample"), rng)[0])
                items.append(i)
        log = train_stream(s, stream, LearnConfig(fixed_latent=True), items=items)
        mse[k] = float(np.mean([recall_mse(x, recall(s, x)) for x in b.x]))
        stream, items = np.array(stream), np.array(items)
        for i in range(len(b.x)):
            j = int(log.steps[int(np.flatnonzero(items == i)[0])].assignments[0][0])
            col_err = max(col_err, float(np.abs(s.weights[0][0, :, j] - stream[items == i].reshape(k, -1).mean(0)).max()))
    ok = mse[50] < mse[1] and mse[50] < 0.005 and col_err < 1e-9
    verdict(6, "noisy encoding", ok, f"mse(1)={mse[1]:.4f} mse(50)={mse[50]:.5f} max|col-mean|={col_err:.1e}")


def test_7_recognition(verdict):
    J = 128
    train = synth_generate({"n": 256, "shape": list(SHAPE), "seed": 3})
    near = synth_generate({"n": 128, "shape": list(SHAPE), "seed": 4})
    far = synth_generate({"n": 128, "shape": list(SHAPE), "seed": 5, "kind": "binary"})
    s = build(Architecture.single_layer(SHAPE, J))
    accs = {}
    for i, x in enumerate(train.x):
        train_step(s, x)
        n = i + 1
        if n in (128, 256):
            # equal-size disjoint new set, half in-distribution and half out-of-distribution
            new = np.concatenate([near.x[: n // 2], far.x[: n // 2]])
            hits = [judge(s, y).old for y in train.x[:n]] + [not judge(s, y).old for y in new]
            accs[n] = float(np.mean(hits))
    ok = accs[128] == 1.0 and accs[256] > 0.5
    verdict(7, "episodic recognition", ok, f"acc@128={accs[128]} acc@256={accs[256]} (best guess 0.5)")


def test_8_feedback_energy(verdict):
    rng = np.random.default_rng(0)
    b = synth_generate({"n": 128, "shape": list(SHAPE), "seed": 12})
    archs = {
        "L2": Architecture(SHAPE, (LayerSpec((4, 4), 128), LayerSpec((4, 4), 128))),
        "L3": Architecture(SHAPE, (LayerSpec((2, 2), 128), LayerSpec((4, 4), 128), LayerSpec((2, 2), 128))),
    }
    out, ok = [], True
    for name, arch in archs.items():
        s = build(arch)
        for x in b.x:
            train_step(s, x)
        eff, efb = [], []
        for x in b.x:
            xc, _ = apply(x, Corruption("occlusion", frac=0.25), rng)
            sw = ff_sweep(s, xc)
            eff.append(energy(s, sw.acts, xc))
            efb.append(energy(s, fb_sweep(s, sw, 0.5), xc))
        ok &= np.mean(efb) >= np.mean(eff)
        out.append(f"{name}: E_ff={np.mean(eff):.3f} E_fb={np.mean(efb):.3f}")
    verdict(8, "inference quality", bool(ok), " ".join(out))


def test_9_invariants(verdict, tmp_path):
    rng = np.random.default_rng(9)
    arch = Architecture((1, 8, 8), (LayerSpec((2, 2), 12), LayerSpec((2, 2), 12), LayerSpec((2, 2), 12)))
    s = build(arch)
    failures = []
    xs = rng.random((40, 1, 8, 8))
    xs[20:] = xs[:20]  # repeats drive the averaging path
    for x in xs:
        before = s.copy()
        summ = train_step(s, x)
        for l in range(arch.n_layers):
            a = summ.assignments[l]
            if not np.all((a >= 0) & (a < arch.layers[l].J)):
                failures.append("one-hot")
            changed = np.any(s.weights[l] != before.weights[l], axis=1)  # (nodes, J)
            if np.any(changed.sum(axis=1) > 1) or np.any(changed & (np.arange(arch.layers[l].J) != a[:, None])):
                failures.append("isolation")
            if s.counts[l].sum() - before.counts[l].sum() != arch.n_nodes[l]:
                failures.append("counts")
            if l > 0:
                Jc = arch.layers[l - 1].J
                g = s.grown[l]
                for n in range(arch.n_nodes[l]):
                    blocks = s.weights[l][n, :, : g[n]].reshape(-1, Jc, g[n]).sum(axis=1)
                    if not np.allclose(blocks, 1):
                        failures.append("stochastic")
    for k in ((1, 1), (2, 2), (4, 4), (8, 8)):
        x = rng.random((3, 8, 8))
        if not np.array_equal(untile(tile(x, k), k, x.shape), x):
            failures.append("tile")
    save_checkpoint(s, tmp_path / "m.ckpt")
    if not load_checkpoint(tmp_path / "m.ckpt").equals(s):
        failures.append("checkpoint")
    cfg = {"task": "online-continual", "data": {"synthetic": {"n": 24, "shape": [1, 8, 8], "n_classes": 4, "kind": "clustered"}},
           "arch": {"J": 12}, "order": "oci", "compare_orders": ["iid"], "seed": 5}
    if run(cfg).to_json(timing=False) != run(json.loads(json.dumps(cfg))).to_json(timing=False):
        failures.append("determinism")
    verdict(9, "invariant suites", not failures, f"violations={sorted(set(failures))}")


def test_10_ablations(verdict):
    rep = run({
        "task": "ablate",
        "data": {"synthetic": {"n": 128, "shape": [1, 32, 32], "kind": "clustered", "n_classes": 4, "spread": 0.5, "seed": 3}},
        "arch": {"J": 64},
        "order": "oci",
        "eval_every": 16,
    })
    c = {k: v["C_mse"] for k, v in rep.metrics.items()}
    ok = c["-Grw"] > c["full"] and c["-lrDecay"] > c["full"]
    verdict(10, "ablations", ok, " ".join(f"{k}={v:.4f}" for k, v in c.items()))
