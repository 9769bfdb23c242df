"""
Command line entry point: pydyad {verify,bench,sweep,train,connectivity}.
Exit codes: 0 on success, 1 when a check fails or a domain error is raised, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from typing import List, Optional, Sequence

import pandas as pd

from . import bench, mnist, oracle
from .exceptions import DyadError
from .layers import DyadConfig, DyadLayer, LayersManager
from .tensor_core import ACCUMULATIONS, PRECISIONS, Matrix, accumulation, add_bias, matmul, max_relative_error

logger = logging.getLogger(__name__)

BENCH_LAYERS = {"dense": "Dense", "it": "Dyad-IT", "ot": "Dyad-OT", "dt": "Dyad-DT", "cat": "Dyad-IT-Cat"}
DEFAULT_TOLERANCE = {"f64": 1e-10, "f32": 1e-5}


def default_seed() -> str:
    # String default: argparse converts it with _seed, so a bad value exits as a usage error.
    return os.environ.get("DYAD_SEED", "0")


def _seed(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got '{value}'") from None


def _widths(value: str) -> List[int]:
    try:
        widths = [int(w) for w in value.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{value}'") from None
    if any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError("widths must be positive")
    return widths


def _positive(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{value}'") from None
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {number}")
    return number


def _count(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{value}'") from None
    if number < 0:
        raise argparse.ArgumentTypeError(f"expected a non negative integer, got {number}")
    return number


def _non_negative_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{value}'") from None
    if not math.isfinite(number) or number < 0:
        raise argparse.ArgumentTypeError(f"expected a finite non negative number, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pydyad", description="Dyad structured sparse linear layers")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", help="compare forward and backward passes with the dense oracle")
    verify.add_argument("--variant", choices=["it", "ot", "dt", "cat", "all"], default="all")
    verify.add_argument("--n-dyad", type=_positive, default=4)
    verify.add_argument("--n-in", type=_positive, default=8)
    verify.add_argument("--n-out", type=_positive, default=8)
    verify.add_argument("--batch", type=_positive, default=4)
    verify.add_argument("--seed", type=_seed, default=default_seed())
    verify.add_argument("--precision", choices=list(PRECISIONS), default="f64")
    verify.add_argument(
        "--tol", type=_non_negative_float, default=None, help="max relative error (1e-10 in f64, 1e-5 in f32)"
    )

    timing = commands.add_parser("bench", help="time a layer against the dense layer of the same dimensions")
    timing.add_argument("--variant", choices=list(BENCH_LAYERS), default="it")
    timing.add_argument("--n-dyad", type=_positive, default=4)
    timing.add_argument("--f-in", type=_positive, default=768)
    timing.add_argument("--f-out", type=_positive, default=3072)

    sweep = commands.add_parser("sweep", help="time dense and Dyad ff modules over model widths")
    sweep.add_argument("--widths", type=_widths, default=[768, 1024, 1536, 2048])
    sweep.add_argument("--variant", choices=["it", "ot", "dt", "cat"], default="it")
    sweep.add_argument("--n-dyad", type=_positive, default=4)

    for command in (timing, sweep):
        command.add_argument("--batch", type=_positive, default=64)
        command.add_argument("--iters", type=_positive, default=200)
        command.add_argument("--warmup", type=_positive, default=20)
        command.add_argument("--seed", type=_seed, default=default_seed())
        command.add_argument("--precision", choices=list(PRECISIONS), default="f32")
        command.add_argument("--accumulation", choices=list(ACCUMULATIONS), default="blas")
        command.add_argument("--out", default=None, help="CSV file, stdout when omitted")

    train = commands.add_parser("train", help="train the MNIST perceptron")
    train.add_argument("--data-dir", required=True)
    train.add_argument("--layer", choices=list(mnist.MODEL_LAYERS), default="dense")
    train.add_argument("--n-dyad", type=_positive, default=4)
    train.add_argument("--hidden", type=_positive, default=256)
    train.add_argument("--epochs", type=_count, default=2)
    train.add_argument("--lr", type=_non_negative_float, default=0.1)
    train.add_argument("--batch-size", type=_positive, default=64)
    train.add_argument("--seed", type=_seed, default=default_seed())
    train.add_argument("--precision", choices=list(PRECISIONS), default="f32")
    train.add_argument("--accumulation", choices=list(ACCUMULATIONS), default="blas")
    train.add_argument("--train-limit", type=_positive, default=None, help="use the first N training images")
    train.add_argument("--checkpoint", required=True)
    train.add_argument("--metrics", default=None, help="metrics CSV file, stdout when omitted")

    connectivity = commands.add_parser("connectivity", help="path counts through two stacked Dyad layers")
    connectivity.add_argument("--n-dyad", type=_positive, default=4)
    connectivity.add_argument("--n", type=_positive, default=8)
    connectivity.add_argument("--variant", choices=list(oracle.VARIANTS), default="it")
    connectivity.add_argument("--out", default=None)

    return parser


def _emit(content: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(content)
    else:
        with open(path, "w", encoding="utf-8", newline="") as stream:
            stream.write(content)


def _verify_layer(config: DyadConfig, seed: int, batch: int) -> List[dict]:
    layer = DyadLayer.init_uniform(config, seed)
    x = Matrix.random(config.f_in, batch, seed + 1, config.precision)
    d_y = Matrix.random(config.f_out, batch, seed + 2, config.precision)

    y = layer.forward(x)
    summed = add_bias(matmul(oracle.materialize_variant(layer), x), layer.bias)
    gradients = layer.backward(x, d_y)
    expected = oracle.oracle_gradients(layer, x, d_y)

    gradient_error = max(
        max_relative_error(gradients.d_w1, expected.d_w1),
        max_relative_error(gradients.d_w2, expected.d_w2),
        max_relative_error(gradients.d_x, expected.d_x),
        max_relative_error(gradients.d_bias, expected.d_bias) if config.has_bias else 0.0,
    )
    checks = [
        ("forward vs component oracle", max_relative_error(y, oracle.oracle_forward(layer, x))),
        ("forward vs materialized matrix", max_relative_error(y, summed)),
        ("gradients vs dense chain rule", gradient_error),
    ]
    if config.fused_cat:
        unfused = DyadLayer(dataclasses.replace(config, fused_cat=False), layer.w1, layer.w2, layer.bias)
        checks.append(("cat vs unfused forward", max_relative_error(y, unfused.forward(x))))
    return [{"variant": config.name, "check": name, "max_rel_error": error} for name, error in checks]


def cmd_verify(args: argparse.Namespace) -> int:
    tol = args.tol if args.tol is not None else DEFAULT_TOLERANCE[args.precision]
    variants = ["it", "ot", "dt", "cat"] if args.variant == "all" else [args.variant]
    rows = []
    with accumulation("ordered"):
        for variant in variants:
            config = DyadConfig(
                n_dyad=args.n_dyad,
                n_in=args.n_in,
                n_out=args.n_out,
                variant="it" if variant == "cat" else variant,
                fused_cat=variant == "cat",
                precision=args.precision,
            )
            rows.extend(_verify_layer(config, args.seed, args.batch))

    results = pd.DataFrame(rows, columns=["variant", "check", "max_rel_error"])
    results["passed"] = results["max_rel_error"] <= tol
    with pd.option_context("display.width", 120, "display.float_format", "{:.3e}".format):
        print(results.to_string(index=False))
    failed = results[~results["passed"]]
    if len(failed) > 0:
        print(f"{len(failed)} check(s) above tolerance {tol:g}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    manager = LayersManager().initialize_layers(["Dense", BENCH_LAYERS[args.variant]])
    n_dyad = None if args.variant == "dense" else args.n_dyad
    with accumulation(args.accumulation):
        dense = manager.build("Dense", args.f_in, args.f_out, args.seed, args.precision)
        records = [bench.time_layer(dense, args.batch, args.warmup, args.iters, args.seed)]
        if args.variant != "dense":
            layer = manager.build(BENCH_LAYERS[args.variant], args.f_in, args.f_out, args.seed, args.precision,
                                  n_dyad=n_dyad)
            records.append(bench.time_layer(layer, args.batch, args.warmup, args.iters, args.seed, records[0]))
    _emit(bench.records_to_csv(records), args.out)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    with accumulation(args.accumulation):
        records = bench.width_sweep(
            args.widths, args.n_dyad, args.batch, args.iters, args.warmup, args.seed, args.precision,
            BENCH_LAYERS[args.variant],
        )
    _emit(bench.records_to_csv(records), args.out)
    bench.check_speedup_trend(records)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    train_set = mnist.load_mnist(args.data_dir, "train", args.precision)
    test_set = mnist.load_mnist(args.data_dir, "test", args.precision)
    if args.train_limit is not None:
        train_set = train_set.subset(args.train_limit)

    model = mnist.MlpModel.build(args.layer, args.hidden, args.n_dyad, args.seed, args.precision,
                                 input_dim=train_set.n_pixels)
    with accumulation(args.accumulation):
        model, metrics = mnist.train(model, train_set, args.epochs, args.lr, args.batch_size, args.seed, test_set)
        if not metrics:
            metrics = [mnist.EpochMetrics(0, float("nan"), mnist.evaluate(model, test_set))]

    final = metrics[-1]
    metadata = {"epoch": final.epoch, "seed": args.seed, "final_loss": final.train_loss}
    mnist.save_checkpoint(model, args.checkpoint, metadata)
    logger.info("checkpoint written to %s", args.checkpoint)
    _emit(mnist.metrics_to_csv(metrics), args.metrics)
    return 0


def cmd_connectivity(args: argparse.Namespace) -> int:
    table = oracle.count_paths(args.n_dyad, args.n, args.variant)
    _emit(table.to_csv(), args.out)
    return 0


COMMANDS = {
    "verify": cmd_verify,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "connectivity": cmd_connectivity,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return 0 if exit_request.code in (0, None) else 2

    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DyadError, FileNotFoundError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
