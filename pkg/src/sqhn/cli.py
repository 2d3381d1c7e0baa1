"""Command-line entry point: ``sqhn <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data as dataio
from .corruption import Corruption, apply
from .harness import ConfigError, ExperimentConfig, derive_seed, growth_stats, make_arch, run, run_sweep
from .inference import UntrainedModelError, recall
from .learning import LearnConfig, train_step
from .metrics import recall_accuracy, recall_mse
from .model import build, load_checkpoint, save_checkpoint
from .recognition import judge


def _write(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e


def _load_config(args, task=None) -> ExperimentConfig:
    d = _read_json(args.config) if args.config else {}
    if task is not None:
        d["task"] = task
    if args.seed is not None:
        d["seed"] = args.seed
    return ExperimentConfig.from_dict(d)


def _emit_report(report, args):
    if args.format == "csv":
        _write(report.to_csv(), args.out)
    else:
        _write(report.to_json(timing=not args.no_timing), args.out)


def cmd_bench(args):
    if not args.config:
        raise ConfigError("bench requires --config")
    _emit_report(run(_load_config(args)), args)


def cmd_theory(args):
    _emit_report(run(_load_config(args, "theory-verify")), args)


def cmd_ablate(args):
    if not args.config:
        raise ConfigError("ablate requires --config")
    _emit_report(run(_load_config(args, "ablate")), args)


def cmd_sweep(args):
    if not args.config:
        raise ConfigError("sweep requires --config")
    base = _read_json(args.config)
    if args.seed is not None:
        base["seed"] = args.seed
    _write(json.dumps(run_sweep(base, args.jobs), indent=2, sort_keys=True) + "\n", args.out)


def cmd_gen_data(args):
    if args.config:
        spec = _read_json(args.config)
    else:
        spec = {"n": args.n, "shape": args.shape, "kind": args.kind, "n_classes": args.classes}
    if args.seed is not None:
        spec["seed"] = args.seed
    if not args.out:
        raise ConfigError("gen-data requires --out")
    try:
        batch = dataio.synth_generate(spec)
    except TypeError as e:
        raise ConfigError(f"bad synthetic spec: {e}") from e
    dataio.save(batch, args.out)


def _read_array(path):
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    if p.suffix == ".npz":
        z = np.load(p)
        return z[z.files[0]]
    return dataio.read_idx(p)


def cmd_convert(args):
    if not args.input or not args.out:
        raise ConfigError("convert requires --input and --out")
    x = _read_array(args.input)
    labels = _read_array(args.labels) if args.labels else None
    batch = dataio.convert_array(x, labels, args.scale)
    if args.limit:
        batch = batch.subset(np.arange(min(args.limit, len(batch))))
    dataio.save(batch, args.out)


def cmd_train(args):
    if not args.data or not args.out:
        raise ConfigError("train requires --data and --out")
    d = _read_json(args.config) if args.config else {}
    batch = dataio.load(args.data)
    arch = make_arch(d.get("arch", {"J": len(batch)}), batch.shape)
    try:
        learn = LearnConfig(**d.get("learn", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    order = dataio.stream_order(batch, d.get("order", "iid"), derive_seed(args.seed or 0, "order"))
    state = build(arch)
    for i in order:
        train_step(state, batch.x[i], learn)
    save_checkpoint(state, args.out)
    if args.report:
        Path(args.report).write_text(json.dumps({"t": state.t, "growth": growth_stats(state)}, indent=2, sort_keys=True) + "\n")


def cmd_recall(args):
    if not args.model or not args.data:
        raise ConfigError("recall requires --model and --data")
    state = load_checkpoint(args.model)
    batch = dataio.load(args.data)
    c = Corruption.from_dict(json.loads(args.corruption)) if args.corruption else Corruption()
    rng = np.random.default_rng(args.seed or 0)
    outs, mses = [], []
    for x in batch.x:
        xc, missing = apply(x, c, rng)
        m = missing if c.hetero else None
        y = recall(state, xc, m, args.lam, args.pass_observed)
        outs.append(y)
        mses.append(recall_mse(x, y, m))
    if args.out:
        dataio.save(dataio.PatternBatch(np.array(outs, np.float32), batch.labels), args.out)
    rep = {"mse": float(np.mean(mses)), "accuracy": recall_accuracy(mses), "per_item_mse": [float(v) for v in mses]}
    _write(json.dumps(rep, indent=2, sort_keys=True) + "\n", args.report)


def cmd_judge(args):
    if not args.model or not args.data:
        raise ConfigError("judge requires --model and --data")
    state = load_checkpoint(args.model)
    batch = dataio.load(args.data)
    res = []
    for i, x in enumerate(batch.x):
        j = judge(state, x, tol=args.tol)
        res.append({"index": i, "old": j.old, "score": j.score, "neuron": j.neuron})
    if args.format == "csv":
        lines = ["index,old,score,neuron"] + [f"{r['index']},{int(r['old'])},{r['score']!r},{r['neuron']}" for r in res]
        _write("\n".join(lines) + "\n", args.out)
    else:
        _write(json.dumps(res, indent=2) + "\n", args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqhn", description="Sparse quantized Hopfield network experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, fmt=True):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int, metavar="U64")
        sp.add_argument("--out", metavar="PATH")
        if fmt:
            sp.add_argument("--format", choices=("json", "csv"), default="json")
        return sp

    for name, fn, help_ in [
        ("bench", cmd_bench, "run the task named in a config file"),
        ("theory-verify", cmd_theory, "forgetting-law oracle and end-to-end check"),
        ("ablate", cmd_ablate, "ablation suite on an online-continual stream"),
    ]:
        sp = common(sub.add_parser(name, help=help_))
        sp.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")
        sp.set_defaults(fn=fn)

    sp = common(sub.add_parser("sweep", help="grid over config values"), fmt=False)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(fn=cmd_sweep)

    sp = common(sub.add_parser("gen-data", help="write a synthetic TensorFile"), fmt=False)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--shape", type=int, nargs=3, default=[1, 16, 16])
    sp.add_argument("--kind", default="random")
    sp.add_argument("--classes", type=int, default=1)
    sp.set_defaults(fn=cmd_gen_data)

    sp = common(sub.add_parser("convert", help="convert .npy/.npz/IDX images to a TensorFile"), fmt=False)
    sp.add_argument("--input")
    sp.add_argument("--labels")
    sp.add_argument("--scale", type=float)
    sp.add_argument("--limit", type=int)
    sp.set_defaults(fn=cmd_convert)

    sp = common(sub.add_parser("train", help="train a model on a TensorFile"), fmt=False)
    sp.add_argument("--data")
    sp.add_argument("--report")
    sp.set_defaults(fn=cmd_train)

    sp = common(sub.add_parser("recall", help="recall (corrupted) patterns from a checkpoint"), fmt=False)
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--corruption", help="JSON corruption spec")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--pass-observed", action="store_true")
    sp.add_argument("--report")
    sp.set_defaults(fn=cmd_recall)

    sp = common(sub.add_parser("judge", help="old/new recognition from a checkpoint"))
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.set_defaults(fn=cmd_judge)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except (ConfigError, dataio.DataFormatError, UntrainedModelError, FileNotFoundError) as e:
        print(f"sqhn {args.cmd}: error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"sqhn {args.cmd}: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
