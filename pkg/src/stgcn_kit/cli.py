"""``stgcn-kit`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 training divergence.  Results go to stdout as tab-separated
``key<TAB>value`` lines (or CSV for the training report); diagnostics go to
stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import RunConfig, load_config, schema_help
from .data import (
    CLASS_NAMES, NUM_SYNTH_CLASSES, Dataset, SklError, hash_seed, load_directory,
    make_synthetic, synth_generate, synth_labels, write_skl,
)
from .graph import get_template
from .network import ConfigError, build_model, count_parameters, module_of
from .tensor import TRAIN, gradient_errors
from .train import DivergenceError, evaluate, train

log = logging.getLogger("stgcn_kit")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_STEP = 1e-5
TINY_GRADCHECK = ["template=chain3", "blocks=4,4", "num_classes=2", "frames=8"]
GRADCHECK_BATCH = 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# data


def _split(cfg: RunConfig, tag: str, template: str) -> Dataset:
    directory = cfg[f"{tag}_dir"]
    if directory:
        if not Path(directory).is_dir():
            raise UsageError(f"{tag}_dir {directory!r} is not a directory")
        seqs = load_directory(directory, cfg["frames"], template)
        if not seqs:
            raise UsageError(f"no .skl files in {directory!r}")
        return Dataset(seqs, _class_names(cfg), [tag] * len(seqs))
    count = cfg[f"synth_{tag}"]
    if count <= 0:
        raise UsageError(f"no {tag} data: set {tag}_dir or synth_{tag}")
    n_train, n_test = (count, 0) if tag == "train" else (0, count)
    return make_synthetic(template, n_train, n_test, cfg["frames"], cfg["seed"], cfg["jitter"])


def _class_names(cfg: RunConfig) -> tuple[str, ...]:
    k = cfg["num_classes"]
    if k == NUM_SYNTH_CLASSES:
        return CLASS_NAMES
    return tuple(f"class{i}" for i in range(k))


def load_run_data(cfg: RunConfig) -> Dataset:
    template = cfg["template"]
    parts = [_split(cfg, "train", template), _split(cfg, "test", template)]
    seqs = [s for p in parts for s in p.sequences]
    split = [t for p in parts for t in p.split]
    try:
        return Dataset(seqs, _class_names(cfg), split)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    dataset = load_run_data(cfg)
    out = Path(args.out or cfg["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {str(out)!r}: {exc.strerror}") from None
    (out / "run.cfg").write_text(cfg.dumps())
    try:
        model, report = train(model_cfg, train_cfg, dataset, out_dir=out)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report.write_csv(out / "report.csv")
    from .plots import plot_training_curves
    plot_training_curves(report, out / "report.png")
    sys.stdout.write(report.to_csv())
    print(f"# checkpoint\t{out / 'model.ckpt'}")
    print(f"# parameters\t{report.parameter_count}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint {args.checkpoint!r} not found") from None
    except CheckpointError as exc:
        raise UsageError(f"bad checkpoint {args.checkpoint!r}: {exc}") from None
    mc = model.config
    if args.data is not None:
        if not Path(args.data).is_dir():
            raise UsageError(f"data path {args.data!r} is not a directory")
        seqs = load_directory(args.data, args.frames)
        if not seqs:
            raise UsageError(f"no .skl files in {args.data!r}")
        wrong = [s for s in seqs if s.template != mc.template]
        if wrong:
            raise UsageError(
                f"data uses template {wrong[0].template!r}, checkpoint expects {mc.template!r}")
        if len({s.frames for s in seqs}) > 1:
            raise UsageError("sequences differ in length; pass --frames to crop/pad")
        names = CLASS_NAMES if mc.num_classes == NUM_SYNTH_CLASSES else tuple(
            f"class{i}" for i in range(mc.num_classes))
        try:
            data = Dataset(seqs, names, ["test"] * len(seqs))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        cfg = load_config(args.config, args.set)
        if cfg["template"] != mc.template:
            raise UsageError(
                f"config template {cfg['template']!r} does not match checkpoint template {mc.template!r}")
        data = _split(cfg, "test", mc.template).subset("test")
    result = evaluate(model, data)
    print(f"accuracy\t{result.accuracy!r}")
    print(f"samples\t{len(data)}")
    print(result.table())
    if args.figure:
        from .plots import plot_confusion
        plot_confusion(result.confusion, result.class_names, args.figure)
    return EXIT_OK


def run_gradcheck(cfg: RunConfig, wrong_sign: str | None = None):
    """Finite-difference check of every parameter and the input of a small model."""
    model_cfg = cfg.model_config()
    model = build_model(model_cfg)
    J = get_template(model_cfg.template).joint_count
    rng = np.random.default_rng(hash_seed(cfg["seed"], 7))
    store = model.store
    store.add("input", rng.normal(size=(GRADCHECK_BATCH, 3, J, cfg["frames"])))
    labels = np.arange(GRADCHECK_BATCH) % model_cfg.num_classes

    def loss_fn(store, backward):
        loss, _, gx = model.loss_and_grad(store["input"], labels, TRAIN, backward)
        if backward:
            store.accumulate("input", gx)
            if wrong_sign is not None:
                store.grad(wrong_sign)[...] *= -1.0
        return loss

    if wrong_sign is not None and wrong_sign not in store:
        raise UsageError(f"unknown parameter {wrong_sign!r} for --inject-wrong-sign")
    return gradient_errors(loss_fn, store, GRADCHECK_STEP)


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = load_config(args.config, args.set)
    else:
        cfg = load_config(None, TINY_GRADCHECK + (args.set or []))
    start = time.perf_counter()
    result = run_gradcheck(cfg, args.inject_wrong_sign)
    elapsed = time.perf_counter() - start
    per_module: dict[str, float] = {}
    for name, err in result.errors.items():
        key = module_of(name)
        per_module[key] = max(per_module.get(key, 0.0), err)
    print("module\tmax_rel_error\tstatus")
    for key, err in per_module.items():
        print(f"{key}\t{err:.3e}\t{'ok' if err < GRADCHECK_TOLERANCE else 'FAIL'}")
    print(f"# max\t{result.max_error:.3e}")
    print(f"# seconds\t{elapsed:.2f}")
    bad = [n for n, e in result.errors.items() if not e < GRADCHECK_TOLERANCE]
    if bad:
        for n in bad:
            print(f"offending\t{n}\t{result.errors[n]:.3e}")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = load_config(args.config, args.set)
    model = build_model(cfg.model_config())
    total, breakdown = count_parameters(model)
    print("module\tparameters")
    for key, n in breakdown.items():
        print(f"{key}\t{n}")
    print(f"total\t{total}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        classes = [int(c) for c in args.classes.split(",") if c.strip()]
    except ValueError:
        raise UsageError(f"--classes must be comma-separated integers, got {args.classes!r}") from None
    if not classes or any(c not in range(NUM_SYNTH_CLASSES) for c in classes):
        raise UsageError(f"--classes must be drawn from 0..{NUM_SYNTH_CLASSES - 1}")
    if args.count < 1:
        raise UsageError("--count must be positive")
    try:
        get_template(args.template)
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for i, label in enumerate(synth_labels(args.count, sorted(classes))):
            seq = synth_generate(label, args.template, args.frames, hash_seed(args.seed, i), args.jitter)
            seq.subject = i
            written.append(write_skl(seq, out / f"{i:05d}_c{label}.skl"))
    except OSError as exc:
        raise UsageError(f"cannot write to {str(out)!r}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    keys = "config keys:\n" + schema_help()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="stgcn-kit", description="Skeleton action recognition with GVFE + DH-TCN ST-GCN blocks.",
        formatter_class=fmt, epilog=keys)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, required=False):
        p.add_argument("--config", required=required, help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    p = sub.add_parser("train", help="train a model", formatter_class=fmt, epilog=keys)
    with_config(p, required=True)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt, epilog=keys)
    p.add_argument("checkpoint")
    p.add_argument("data", nargs="?", help="directory of .skl files (otherwise the config's test split)")
    with_config(p)
    p.add_argument("--frames", type=int, help="crop/pad sequences to this length")
    p.add_argument("--figure", help="write a confusion-matrix PNG here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients", formatter_class=fmt,
                       epilog=keys + "\n\ndefaults: " + " ".join(TINY_GRADCHECK))
    with_config(p)
    p.add_argument("--inject-wrong-sign", metavar="PARAM", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="count trainable parameters", formatter_class=fmt, epilog=keys)
    with_config(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", help="write synthetic .skl sequences")
    p.add_argument("--classes", default="0,1,2,3", help="comma-separated class ids (default 0,1,2,3)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--template", default="chain7")
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--jitter", type=float, default=0.01)
    p.set_defaults(func=cmd_synth)
    return parser


def _thread_limit():
    n = int(os.environ.get("STGCN_KIT_THREADS", "1") or 1)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return nullcontext()
    return threadpool_limits(max(n, 1))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        with _thread_limit():
            return args.func(args)
    except (UsageError, ConfigError, SklError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
