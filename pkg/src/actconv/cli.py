"""``actconv`` command line: train, eval, positions, gradcheck, bench.

Exit status is 0 on success, 1 when an input fails validation (bad config,
shape mismatch, failed gradient check, diverged training) and 2 on I/O
errors (missing data, unreadable or corrupt checkpoint).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import bench, experiments, gradcheck, viz
from .checkpoint import MAGIC, CheckpointError, capture, load_checkpoint, network_from_checkpoint, \
    history_from_checkpoint, restore_trainer, save_checkpoint
from .data import DataError
from .optim import TrainConfig
from .train import Trainer, TrainingDiverged, metrics_csv, parse_trajectory_csv, trajectory_csv

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


def _write(path, text):
    with open(path, "w", newline="\n") as f:
        f.write(text)


def _source_from_args(args):
    if args.dataset == "synthetic":
        src = {"name": "synthetic", "seed": args.data_seed}
        if args.limit is not None:
            src["n_train"] = args.limit
        if args.test_limit is not None:
            src["n_test"] = args.test_limit
        return src
    return {"name": "cifar10", "data_dir": args.data_dir or experiments.default_data_dir(),
            "limit": args.limit, "test_limit": args.test_limit, "zca": bool(args.zca)}


def _load_config(args):
    if args.config:
        cfg = TrainConfig.load(args.config)
    elif args.dataset == "synthetic":
        cfg = experiments.synthetic_config()
    else:
        cfg = TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _save_outputs(out, trainer, source, arch):
    os.makedirs(out, exist_ok=True)
    save_checkpoint(os.path.join(out, "checkpoint.bin"),
                    capture(trainer, {"dataset": source, "arch": arch}))
    _write(os.path.join(out, "metrics.csv"), metrics_csv(trainer.metrics))
    if trainer.net.acu:
        _write(os.path.join(out, "trajectory.csv"), trajectory_csv(trainer.history))


def cmd_train(args):
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        source = ckpt.meta["dataset"]
        arch = ckpt.meta.get("arch", ckpt.spec.arch)
        train, test = experiments.load_datasets(source)
        trainer = restore_trainer(ckpt, train, test)
    else:
        cfg = _load_config(args)
        source = _source_from_args(args)
        if args.dataset == "synthetic" and args.data_seed is None:
            source["seed"] = cfg.seed
        train, test = experiments.load_datasets(source)
        arch = args.arch or ("shallow" if args.dataset == "synthetic" else "plain")
        spec = experiments.build_spec(arch, train.class_count, train.images.shape[1], args.acu == "on",
                                      args.width, args.blocks)
        net = experiments.build_network(spec, train, cfg.seed, cfg.position_lr_scale)
        trainer = Trainer(net, cfg, train, test)
    try:
        trainer.run(until=args.stop_at)
    except TrainingDiverged as e:
        print(f"error: training diverged: loss became non-finite at iteration {e.iteration}", file=sys.stderr)
        return EXIT_INVALID
    _save_outputs(args.out, trainer, source, arch)
    if trainer.metrics:
        it, lr, loss, err = trainer.metrics[-1]
        print(f"iter {it} train_loss {loss:.6f} test_error {err!r}")
    return EXIT_OK


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    source = dict(ckpt.meta["dataset"])
    if args.data_dir:
        source["data_dir"] = args.data_dir
    elif source.get("name") == "cifar10" and not source.get("data_dir"):
        source["data_dir"] = experiments.default_data_dir()
    train, test = experiments.load_datasets(source)
    data = train if args.split == "train" else test
    net = network_from_checkpoint(ckpt)
    err = net.error_rate(data.images, data.labels)
    print(f"top-1 error {err!r}%")
    return EXIT_OK


def _read_history(path):
    try:
        with open(path, "rb") as f:
            head = f.read(len(MAGIC))
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    if head == MAGIC:
        return history_from_checkpoint(load_checkpoint(path))
    with open(path) as f:
        return parse_trajectory_csv(f.read())


def cmd_positions(args):
    history = _read_history(args.source)
    if not history:
        print(f"error: {args.source} has no ACU layers", file=sys.stderr)
        return EXIT_INVALID
    text = trajectory_csv(history)
    if args.svg is None:
        sys.stdout.write(text)
        return EXIT_OK
    os.makedirs(args.svg, exist_ok=True)
    for name, svg in viz.history_svgs(history).items():
        _write(os.path.join(args.svg, f"{name}.svg"), svg)
    _write(os.path.join(args.svg, "trajectory.csv"), text)
    for name, entries in history.items():
        it, pts = entries[-1]
        print(f"{name}: {len(pts)} synapses at iter {it}")
    return EXIT_OK


def cmd_gradcheck(args):
    ok = True
    for report in gradcheck.run_suite(args.module):
        print(report.line())
        ok = ok and report.passed
    return EXIT_OK if ok else EXIT_INVALID


def cmd_bench(args):
    with open(args.shapes) as f:
        shapes = bench.parse_shapes(f.read())
    backends = None if args.backend == "all" else [args.backend]
    text = bench.bench_csv(bench.run_bench(shapes, args.reps, backends))
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="actconv", description="Active convolution units in numpy.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network and write checkpoint, metrics and trajectories")
    t.add_argument("--config", help="key=value training config file")
    t.add_argument("--dataset", choices=("cifar10", "synthetic"), default="synthetic")
    t.add_argument("--data-dir", help=f"CIFAR-10 directory (default ${experiments.DATA_ENV})")
    t.add_argument("--arch", choices=experiments.ARCHS, help="default: shallow on synthetic, plain on cifar10")
    t.add_argument("--acu", choices=("on", "off"), default="on")
    t.add_argument("--width", type=float, default=1.0, help="channel width multiplier")
    t.add_argument("--blocks", type=int, default=5, help="residual blocks per stage")
    t.add_argument("--limit", type=int, help="training images to use")
    t.add_argument("--test-limit", type=int, help="test images to use")
    t.add_argument("--zca", action="store_true", help="ZCA-whiten CIFAR-10 after contrast normalisation")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--data-seed", type=int, help="synthetic data seed (default: the training seed)")
    t.add_argument("--stop-at", type=int, help="stop after this many iterations (resumable)")
    t.add_argument("--resume", help="continue from a checkpoint")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 error of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--data-dir", help="override the dataset directory stored in the checkpoint")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("positions", help="export synapse trajectories and plots")
    s.add_argument("source", help="checkpoint or trajectory CSV")
    s.add_argument("--svg", help="directory for per-layer SVG plots and trajectory.csv")
    s.set_defaults(func=cmd_positions)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--module", choices=("interp", "conv", "acu", "network"), required=True)
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="forward timing of the ACU against conv2d")
    b.add_argument("--shapes", required=True, help="file of 'N C D H W [K]' lines")
    b.add_argument("--reps", type=int, default=30)
    b.add_argument("--backend", choices=("all", "numpy", "numba"), default="all")
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse uses 2 for bad usage; here 2 means I/O
        return EXIT_INVALID if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, DataError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
