"""Experiment orchestration: config parsing, task runners and reports."""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import time
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from . import data as dataio
from .corruption import Corruption, apply
from .inference import recall
from .learning import LearnConfig, train_step
from .metrics import (
    cumulative,
    exact_intact_discrete,
    forgetting_oracle,
    order_sensitivity,
    recall_accuracy,
    recall_mse,
    theoretical_accuracy,
)
from .mhn import recall_mhn, store_batch
from .model import Architecture, build
from .recognition import judge

TASKS = (
    "assoc-auto",
    "assoc-hetero",
    "online-continual",
    "noisy-encoding",
    "episodic-recognition",
    "theory-verify",
    "ablate",
)

UNAVAILABLE_BASELINES = ["GPCN", "BayesPCN", "MHN-BP/SGD/Adam", "EWC++", "ER"]

DEFAULT_ABLATIONS = {
    "full": {},
    "-Dir": {"growth_mode": "constant", "eps0": 0.8},
    "-lrDecay": {"lr_mode": "constant", "eta": 0.5},
    "-Grw": {"growth_mode": "disabled"},
    "-Avg": {"averaging": False},
}


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def rng_for(seed: int, name: str):
    return np.random.default_rng(derive_seed(seed, name))


@dataclass
class ExperimentConfig:
    """Everything a run depends on besides the input files.

    ``data`` / ``test_data`` / ``ood_data`` take one of
    ``{"synthetic": {...}}``, ``{"path": "x.sqd"}`` or ``{"manifest": "m.csv"}``,
    with an optional ``"limit"``. ``arch`` is an Architecture dict; when
    ``layers`` is omitted a single full-image layer with ``J`` neurons is used.
    """

    task: str
    data: dict = field(default_factory=lambda: {"synthetic": {"n": 64, "shape": [1, 16, 16]}})
    arch: dict = field(default_factory=lambda: {"J": 64})
    learn: dict = field(default_factory=dict)
    seed: int = 0
    order: str = "iid"
    corruptions: list = field(default_factory=lambda: [{"kind": "none"}])
    test_corruption: dict = field(default_factory=lambda: {"kind": "none"})
    eval_every: int = 8
    gamma_recall: float = 0.01
    lambda_fb: float | None = None
    pass_observed: bool = False
    baselines: list = field(default_factory=lambda: ["mhn-dot", "mhn-manhattan"])
    mhn_beta: float = 10000.0
    compare_orders: list = field(default_factory=list)
    order_seeds: int = 1
    samples_per_item: list = field(default_factory=lambda: [1, 5, 20, 50])
    sample_corruption: dict = field(default_factory=lambda: {"kind": "binary_sample"})
    test_data: dict | None = None
    ood_data: dict | None = None
    pretrain: dict | None = None
    recognition_tol: float = 1e-9
    theory: dict = field(default_factory=lambda: {"J": 100, "T": 300, "trials": 1000, "end_to_end": True})
    variants: dict | None = None
    sweep: dict | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.order not in dataio.STREAM_MODES:
            raise ConfigError(f"unknown order {self.order!r}")
        for o in self.compare_orders:
            if o not in dataio.STREAM_MODES:
                raise ConfigError(f"unknown order {o!r} in compare_orders")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        try:
            lc = LearnConfig(**self.learn)
            [Corruption.from_dict(c) for c in self.corruptions]
            Corruption.from_dict(self.test_corruption)
            Corruption.from_dict(self.sample_corruption)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        if lc.fixed_latent and self.task != "noisy-encoding":
            raise ConfigError("fixed_latent (SQHN+) is only valid for the noisy-encoding task")
        if self.task == "assoc-hetero" and not all(Corruption.from_dict(c).hetero for c in self.corruptions):
            raise ConfigError("assoc-hetero requires pixel_dropout or right_mask corruptions")
        for b in self.baselines:
            if b not in ("mhn-dot", "mhn-manhattan", "mhn-cosine"):
                raise ConfigError(f"unknown baseline {b!r}")

    @classmethod
    def from_dict(cls, d) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "task" not in d:
            raise ConfigError("config must name a task")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            with open(path) as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        return cls.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["learn"] = LearnConfig(**self.learn).to_dict()
        return d


@dataclass
class ExperimentReport:
    task: str
    config: dict
    metrics: dict
    series: list = field(default_factory=list)
    growth: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    version: str = __version__
    unavailable_baselines: list = field(default_factory=lambda: list(UNAVAILABLE_BASELINES))

    def to_dict(self, timing=True):
        d = asdict(self)
        if not timing:
            d.pop("timing")
        return _jsonable(d)

    def to_json(self, timing=True) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.series
        if rows:
            keys = sorted({k for r in rows for k in r})
            w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow(_jsonable(r))
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------- helpers


def load_data(spec: dict | None, seed: int, name: str) -> dataio.PatternBatch:
    if spec is None:
        raise ConfigError(f"{name} data is required for this task")
    spec = dict(spec)
    limit = spec.pop("limit", None)
    if "synthetic" in spec:
        syn = dict(spec["synthetic"])
        syn.setdefault("seed", derive_seed(seed, name) % 2**31)
        try:
            batch = dataio.synth_generate(syn)
        except TypeError as e:
            raise ConfigError(f"bad synthetic spec: {e}") from e
    elif "path" in spec:
        batch = dataio.load(spec["path"])
    elif "manifest" in spec:
        batch = dataio.load_manifest(spec["manifest"])
    else:
        raise ConfigError(f"{name}: data spec needs 'synthetic', 'path' or 'manifest'")
    if limit is not None:
        batch = batch.subset(np.arange(min(int(limit), len(batch))))
    return batch


def make_arch(spec: dict, input_shape) -> Architecture:
    spec = dict(spec)
    spec.setdefault("input_shape", list(input_shape))
    if tuple(spec["input_shape"]) != tuple(input_shape):
        raise ConfigError(f"arch input_shape {spec['input_shape']} does not match data {list(input_shape)}")
    if "layers" not in spec:
        J = spec.pop("J", None)
        if J is None:
            raise ConfigError("arch needs 'layers' or 'J'")
        spec["layers"] = [{"kernel": list(input_shape[1:]), "J": J}]
    else:
        spec.pop("J", None)
    try:
        return Architecture.from_dict(spec)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad architecture: {e}") from e


def growth_stats(state) -> dict:
    out = {}
    for l, (g, layer) in enumerate(zip(state.grown, state.arch.layers)):
        out[f"layer{l}"] = {
            "nodes": int(len(g)),
            "capacity": int(layer.J),
            "grown_mean": float(g.mean()),
            "grown_min": int(g.min()),
            "grown_max": int(g.max()),
            "fill": float(g.mean() / layer.J),
        }
    return out


def evaluate_recall(state, xs, corruption: Corruption, rng, lam=None, pass_observed=False):
    mses = []
    for x in xs:
        xc, missing = apply(x, corruption, rng)
        m = missing if corruption.hetero else None
        out = recall(state, xc, m, lam, pass_observed and corruption.hetero)
        mses.append(recall_mse(x, out, m))
    return np.array(mses)


def corruption_label(c: Corruption) -> str:
    parts = [c.kind]
    if c.kind in ("white_noise", "gaussian_sample"):
        parts.append(f"var={c.var:g}")
    if c.frac is not None:
        parts.append(f"frac={c.frac:g}")
    if c.kind == "occlusion":
        parts.append(c.fill)
    return ":".join(parts)


def _train(state, xs, learn: LearnConfig, hook=None):
    for i, x in enumerate(xs):
        train_step(state, x, learn)
        if hook is not None:
            hook(i, state)


# ---------------------------------------------------------------- tasks


def run_assoc(cfg: ExperimentConfig) -> ExperimentReport:
    batch = load_data(cfg.data, cfg.seed, "train")
    arch = make_arch(cfg.arch, batch.shape)
    learn = LearnConfig(**cfg.learn)
    stream = dataio.make_stream(batch, cfg.order, derive_seed(cfg.seed, "order"))
    state = build(arch)
    t0 = time.perf_counter()
    _train(state, stream.x, learn)
    train_s = time.perf_counter() - t0
    metrics, series = {}, []
    for cd in cfg.corruptions:
        c = Corruption.from_dict(cd)
        label = corruption_label(c)
        res = {}
        mses = evaluate_recall(
            state, batch.x, c, rng_for(cfg.seed, "corrupt:" + label), cfg.lambda_fb, cfg.pass_observed
        )
        res["sqhn"] = {
            "mse": float(mses.mean()),
            "mse_std": float(mses.std()),
            "accuracy": recall_accuracy(mses, cfg.gamma_recall),
        }
        for b in cfg.baselines:
            mem = store_batch(batch.x, cfg.mhn_beta, b.split("-", 1)[1])
            rng = rng_for(cfg.seed, "corrupt:" + label)
            bm = []
            for x in batch.x:
                xc, missing = apply(x, c, rng)
                m = missing if c.hetero else None
                bm.append(recall_mse(x, recall_mhn(mem, xc, m), m))
            bm = np.array(bm)
            res[b] = {"mse": float(bm.mean()), "mse_std": float(bm.std()), "accuracy": recall_accuracy(bm, cfg.gamma_recall)}
        metrics[label] = res
        for model, r in res.items():
            series.append({"corruption": label, "model": model, **r})
    return ExperimentReport(
        cfg.task, cfg.to_dict(), metrics, series, growth_stats(state), {"train_s": train_s}
    )


def online_run(cfg: ExperimentConfig, batch, order: str, learn: LearnConfig, order_seed: int):
    """Train once over ``batch`` in ``order``; re-test all seen items every ``eval_every`` steps."""
    arch = make_arch(cfg.arch, batch.shape)
    stream = dataio.make_stream(batch, order, order_seed)
    state = build(arch)
    test_c = Corruption.from_dict(cfg.test_corruption)
    rng = rng_for(cfg.seed, "test-noise")
    rows = []
    n = len(stream)
    for i, x in enumerate(stream.x):
        train_step(state, x, learn)
        if (i + 1) % cfg.eval_every == 0 or i + 1 == n:
            mses = evaluate_recall(state, stream.x[: i + 1], test_c, rng, cfg.lambda_fb)
            rows.append({"t": i + 1, "mse": float(mses.mean()), "acc": recall_accuracy(mses, cfg.gamma_recall)})
    mse = [r["mse"] for r in rows]
    acc = [r["acc"] for r in rows]
    return state, rows, {"C_mse": cumulative(mse), "C_acc": cumulative(acc)}


def run_online(cfg: ExperimentConfig) -> ExperimentReport:
    batch = load_data(cfg.data, cfg.seed, "train")
    learn = LearnConfig(**cfg.learn)
    t0 = time.perf_counter()
    metrics, series = {}, []
    state = None
    for order in [cfg.order, *[o for o in cfg.compare_orders if o != cfg.order]]:
        cm, ca = [], []
        for k in range(cfg.order_seeds):
            state_k, rows, summ = online_run(cfg, batch, order, learn, derive_seed(cfg.seed, f"order:{k}"))
            if order == cfg.order and k == 0:
                state = state_k
            cm.append(summ["C_mse"])
            ca.append(summ["C_acc"])
            series.extend({"order": order, "run": k, **r} for r in rows)
        metrics[order] = {"C_mse": float(np.mean(cm)), "C_acc": float(np.mean(ca))}
    for o in cfg.compare_orders:
        if o != cfg.order:
            s = order_sensitivity(metrics[cfg.order]["C_mse"], metrics[o]["C_mse"])
            metrics[f"S_mse[{cfg.order} vs {o}]"] = s
    return ExperimentReport(
        cfg.task, cfg.to_dict(), metrics, series, growth_stats(state), {"total_s": time.perf_counter() - t0}
    )


def run_noisy(cfg: ExperimentConfig) -> ExperimentReport:
    batch = load_data(cfg.data, cfg.seed, "train")
    arch = make_arch(cfg.arch, batch.shape)
    learn = LearnConfig(**cfg.learn)
    sample_c = Corruption.from_dict(cfg.sample_corruption)
    t0 = time.perf_counter()
    metrics, series = {}, []
    state = None
    for k in cfg.samples_per_item:
        state = build(arch)
        rng = rng_for(cfg.seed, f"samples:{k}")
        for x in batch.x:
            pinned = None
            for s in range(k):
                xs, _ = apply(x, sample_c, rng)
                summary = train_step(state, xs, learn, pinned)
                if learn.fixed_latent and pinned is None:
                    pinned = [a.copy() for a in summary.assignments]
        mses = np.array([recall_mse(x, recall(state, x, lam=cfg.lambda_fb)) for x in batch.x])
        row = {"samples": k, "mse": float(mses.mean()), "acc": recall_accuracy(mses, cfg.gamma_recall)}
        metrics[str(k)] = {"mse": row["mse"], "acc": row["acc"]}
        series.append(row)
    return ExperimentReport(
        cfg.task, cfg.to_dict(), metrics, series, growth_stats(state), {"total_s": time.perf_counter() - t0}
    )


def reset_layer(state, l):
    state.weights[l][:] = 0
    state.counts[l][:] = 0
    state.grown[l][:] = 0
    if l == state.root:
        state.mu[:] = 0


def run_recognition(cfg: ExperimentConfig) -> ExperimentReport:
    train = load_data(cfg.data, cfg.seed, "train")
    new = load_data(cfg.test_data, cfg.seed, "test")
    ood = load_data(cfg.ood_data, cfg.seed, "ood")
    arch = make_arch(cfg.arch, train.shape)
    learn = LearnConfig(**cfg.learn)
    state = build(arch)
    t0 = time.perf_counter()
    if cfg.pretrain:
        pre = load_data(cfg.pretrain.get("data", cfg.data), cfg.seed, "pretrain")
        steps = int(cfg.pretrain.get("steps", len(pre)))
        order = dataio.stream_order(pre, "iid", derive_seed(cfg.seed, "pretrain-order"))
        for i in range(steps):
            train_step(state, pre.x[order[i % len(order)]], learn)
        reset_layer(state, state.root)
        state.t = 0
        learn = LearnConfig(**{**cfg.learn, "frozen_layers": arch.n_layers - 1})
    stream = dataio.make_stream(train, cfg.order, derive_seed(cfg.seed, "order"))
    n = len(stream)
    if len(new) < n or len(ood) < n:
        raise ConfigError("test_data and ood_data need at least as many items as data")
    rows = []
    for i, x in enumerate(stream.x):
        train_step(state, x, learn)
        if (i + 1) % cfg.eval_every == 0 or i + 1 == n:
            m = i + 1
            old = np.array([judge(state, y, tol=cfg.recognition_tol).old for y in stream.x[:m]])
            nw = np.array([not judge(state, y, tol=cfg.recognition_tol).old for y in new.x[:m]])
            od = np.array([not judge(state, y, tol=cfg.recognition_tol).old for y in ood.x[:m]])
            rows.append({
                "t": m,
                "acc": float(np.concatenate([old, nw, od]).mean()),
                "acc_train": float(old.mean()),
                "acc_in_dist": float(nw.mean()),
                "acc_out_dist": float(od.mean()),
            })
    metrics = {
        "final_acc": rows[-1]["acc"] if rows else 0.0,
        "C_acc": cumulative([r["acc"] for r in rows]),
        "best_guess": 2 / 3,
    }
    return ExperimentReport(
        cfg.task, cfg.to_dict(), metrics, rows, growth_stats(state), {"total_s": time.perf_counter() - t0}
    )


def run_theory(cfg: ExperimentConfig) -> ExperimentReport:
    th = {"J": 100, "T": 300, "trials": 1000, "end_to_end": True, **cfg.theory}
    J, T = int(th["J"]), int(th["T"])
    t0 = time.perf_counter()
    metrics, series = {}, []
    for process in th.get("processes", ["discrete", "poisson"]):
        curve = forgetting_oracle(J, T, int(th["trials"]), rng_for(cfg.seed, f"oracle-{process}"), process)
        metrics[f"oracle_{process}_max_dev"] = curve.max_dev
        metrics[f"oracle_{process}_max_dev_in_se"] = curve.max_dev_in_se
        if process == "discrete":
            # the discrete process has its own closed form; deviations from it are pure noise
            exact = exact_intact_discrete(J, curve.t)
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(curve.stderr > 0, np.abs(curve.mean - exact) / curve.stderr, 0.0)
            metrics["oracle_discrete_vs_exact_max_in_se"] = float(z.max())
        metrics[f"oracle_{process}"] = curve.to_dict()
        series += [
            {"process": process, "t": int(t), "intact_mean": m, "intact_se": s, "intact_theory": th_}
            for t, m, s, th_ in zip(curve.t, curve.mean, curve.stderr, curve.theory)
        ]
    state = None
    if th.get("end_to_end", True):
        shape = tuple(th.get("shape", (1, 16, 16)))
        batch = dataio.synth_generate({"n": J + T, "shape": shape, "seed": derive_seed(cfg.seed, "e2e") % 2**31})
        state = build(Architecture.single_layer(shape, J))
        every = int(th.get("eval_every", 10))
        dev = 0.0
        for i, x in enumerate(batch.x):
            train_step(state, x, LearnConfig())
            t = i + 1 - J
            if t >= 0 and t % every == 0:
                mses = [recall_mse(y, recall(state, y)) for y in batch.x[: i + 1]]
                acc = recall_accuracy(mses, cfg.gamma_recall)
                theory = float(theoretical_accuracy(J, t))
                dev = max(dev, abs(acc - theory))
                series.append({"t": t, "e2e_acc": acc, "acc_theory": theory})
        metrics["e2e_max_abs_dev"] = dev
    return ExperimentReport(
        cfg.task,
        cfg.to_dict(),
        metrics,
        series,
        growth_stats(state) if state is not None else {},
        {"total_s": time.perf_counter() - t0},
    )


def run_ablate(cfg: ExperimentConfig) -> ExperimentReport:
    batch = load_data(cfg.data, cfg.seed, "train")
    variants = cfg.variants or DEFAULT_ABLATIONS
    t0 = time.perf_counter()
    metrics, series = {}, []
    state = None
    for name, overrides in variants.items():
        learn = LearnConfig(**{**cfg.learn, **overrides})
        st, rows, summ = online_run(cfg, batch, cfg.order, learn, derive_seed(cfg.seed, "order:0"))
        if state is None:
            state = st
        metrics[name] = summ
        series.extend({"variant": name, **r} for r in rows)
    return ExperimentReport(
        cfg.task, cfg.to_dict(), metrics, series, growth_stats(state), {"total_s": time.perf_counter() - t0}
    )


RUNNERS = {
    "assoc-auto": run_assoc,
    "assoc-hetero": run_assoc,
    "online-continual": run_online,
    "noisy-encoding": run_noisy,
    "episodic-recognition": run_recognition,
    "theory-verify": run_theory,
    "ablate": run_ablate,
}


def run(cfg: ExperimentConfig | dict) -> ExperimentReport:
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    t0 = time.perf_counter()
    report = RUNNERS[cfg.task](cfg)
    report.timing["wall_s"] = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------- sweeps


def _set_path(d: dict, path: str, value):
    keys = path.split(".")
    for k in keys[:-1]:
        if isinstance(d, list):
            d = d[int(k)]
        else:
            d = d.setdefault(k, {})
    if isinstance(d, list):
        d[int(keys[-1])] = value
    else:
        d[keys[-1]] = value


def sweep_points(base: dict) -> list:
    """Expand ``base["sweep"]`` (dotted path -> list of values) into a config grid."""
    grid = base.get("sweep") or {}
    base = {k: v for k, v in base.items() if k != "sweep"}
    paths = sorted(grid)
    points = []
    for values in itertools.product(*(grid[p] for p in paths)):
        d = copy.deepcopy(base)
        for p, v in zip(paths, values):
            _set_path(d, p, v)
        points.append((dict(zip(paths, values)), d))
    return points


def _run_point(d):
    return run(d).to_dict(timing=False)["metrics"]


def run_sweep(base: dict, jobs: int = 1) -> dict:
    points = sweep_points(base)
    for _, d in points:
        ExperimentConfig.from_dict(d)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_run_point, [d for _, d in points]))
    else:
        results = [_run_point(d) for _, d in points]
    return {"sweep": [{"params": p, "metrics": m} for (p, _), m in zip(points, results)], "version": __version__}
