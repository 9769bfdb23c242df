"""
Timing harness for dense and Dyad layers: mean forward, backward and total wall-clock time per
minibatch, and the speedup of each Dyad layer against the dense layer of the same dimensions.
Timings are CPU measurements; background load invalidates a run.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence
from warnings import warn

import numpy as np
import pandas as pd

from .layers import DenseLayer, Layer, LayersManager, validate_dims
from .tensor_core import FlopCounter, Matrix, get_dtype

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["variant", "n_dyad", "f_in", "f_out", "batch", "fwd_ms", "bwd_ms", "total_ms", "speedup"]


@dataclass(frozen=True)
class BenchRecord:
    variant: str
    n_dyad: int
    f_in: int
    f_out: int
    batch: int
    fwd_ms: float
    bwd_ms: float
    total_ms: float
    speedup: float

    def with_baseline(self, baseline: BenchRecord) -> BenchRecord:
        values = asdict(self)
        values["speedup"] = baseline.total_ms / self.total_ms
        return BenchRecord(**values)


def variant_tag(layer: Layer) -> str:
    if isinstance(layer, DenseLayer):
        return "dense"
    tag = "dyad-" + layer.config.variant
    return tag + "-cat" if layer.config.fused_cat else tag


def _n_dyad(layer: Layer) -> int:
    return 1 if isinstance(layer, DenseLayer) else layer.config.n_dyad


def format_ms(milliseconds: float) -> str:
    if milliseconds >= 10:
        return "%.1f ms" % milliseconds
    if milliseconds >= 0.01:
        return "%.3f ms" % milliseconds
    return "%.0f ns" % (milliseconds * 1e6)


def compared_ms(variant_ms: float, dense_ms: float) -> str:
    ratio = dense_ms / variant_ms
    percent = (variant_ms - dense_ms) * 100 / dense_ms
    what = "faster" if ratio >= 1.0 else "slower"
    return "%s (%+.1f%%, %.2fx %s)" % (format_ms(variant_ms), percent, ratio, what)


def time_layer(
    layer: Layer,
    batch: int,
    warmup_iters: int = 20,
    timed_iters: int = 200,
    seed: int = 0,
    baseline: Optional[BenchRecord] = None,
) -> BenchRecord:
    """
    Time forward and backward passes of a layer on fresh random inputs. Input generation is kept
    out of the timed regions and a running sink consumes every output.
    :param baseline: Dense record at the same dimensions, used for the speedup column. Dense layers
    without a baseline get a speedup of 1, Dyad layers without one get NaN.
    """
    if warmup_iters < 1:
        raise ValueError(f"warmup_iters must be at least 1, got {warmup_iters}")
    if timed_iters < 10:
        raise ValueError(f"timed_iters must be at least 10, got {timed_iters}")
    if batch < 1:
        raise ValueError(f"batch must be at least 1, got {batch}")

    rng = np.random.default_rng(seed)
    dtype = get_dtype(layer.precision)
    sink = 0.0
    fwd_total = 0.0
    bwd_total = 0.0
    for iteration in range(warmup_iters + timed_iters):
        x = Matrix(rng.standard_normal((layer.f_in, batch)).astype(dtype))
        d_y = Matrix(rng.standard_normal((layer.f_out, batch)).astype(dtype))

        start = time.perf_counter()
        y = layer.forward(x)
        middle = time.perf_counter()
        gradients = layer.backward(x, d_y)
        end = time.perf_counter()

        sink += float(y.values[0, 0]) + float(gradients.d_x.values[0, 0])
        if iteration >= warmup_iters:
            fwd_total += middle - start
            bwd_total += end - middle

    fwd_ms = fwd_total * 1e3 / timed_iters
    bwd_ms = bwd_total * 1e3 / timed_iters
    record = BenchRecord(
        variant=variant_tag(layer),
        n_dyad=_n_dyad(layer),
        f_in=layer.f_in,
        f_out=layer.f_out,
        batch=batch,
        fwd_ms=fwd_ms,
        bwd_ms=bwd_ms,
        total_ms=fwd_ms + bwd_ms,
        speedup=1.0 if isinstance(layer, DenseLayer) else float("nan"),
    )
    if baseline is not None:
        record = record.with_baseline(baseline)
    logger.debug("%s %dx%d batch %d: %s (sink %.3g)", record.variant, record.f_out, record.f_in, batch,
                 format_ms(record.total_ms), sink)
    return record


def _combine(records: Sequence[BenchRecord], f_in: int, f_out: int) -> BenchRecord:
    fwd_ms = sum(r.fwd_ms for r in records)
    bwd_ms = sum(r.bwd_ms for r in records)
    first = records[0]
    return BenchRecord(first.variant, first.n_dyad, f_in, f_out, first.batch, fwd_ms, bwd_ms, fwd_ms + bwd_ms,
                       first.speedup)


def time_ff_pair(
    layer_name: str,
    width: int,
    n_dyad: Optional[int] = None,
    batch: int = 64,
    iters: int = 200,
    warmup: int = 20,
    seed: int = 0,
    precision: str = "f32",
    manager: Optional[LayersManager] = None,
) -> BenchRecord:
    """
    Time the two linear layers of a ff module, width -> 4*width and back, built from a layer
    preset, and report them as a single record with f_in=width and f_out=4*width.
    """
    manager = manager if manager is not None else LayersManager().initialize_layers(layer_name)
    up = manager.build(layer_name, width, 4 * width, seed, precision, n_dyad=n_dyad)
    down = manager.build(layer_name, 4 * width, width, seed + 1, precision, n_dyad=n_dyad)
    records = [time_layer(layer, batch, warmup, iters, seed) for layer in (up, down)]
    return _combine(records, width, 4 * width)


def width_sweep(
    widths: Sequence[int],
    n_dyad: int = 4,
    batch: int = 64,
    iters: int = 200,
    warmup: int = 20,
    seed: int = 0,
    precision: str = "f32",
    layer_name: str = "Dyad-IT",
) -> List[BenchRecord]:
    """
    Dense and Dyad ff modules at each width; two records per width, dense first.
    Every width is checked for divisibility before anything is timed.
    """
    for width in widths:
        validate_dims(4 * width, width, n_dyad)

    manager = LayersManager().initialize_layers(["Dense", layer_name])
    records: List[BenchRecord] = []
    for width in widths:
        dense = time_ff_pair("Dense", width, None, batch, iters, warmup, seed, precision, manager)
        dyad = time_ff_pair(layer_name, width, n_dyad, batch, iters, warmup, seed, precision, manager)
        records.extend([dense, dyad.with_baseline(dense)])
        logger.info("width %d: dense %s, %s %s", width, format_ms(dense.total_ms), dyad.variant,
                    compared_ms(dyad.total_ms, dense.total_ms))
    return records


def count_forward_flops(layer: Layer, batch: int = 1) -> int:
    x = Matrix.zeros(layer.f_in, batch, layer.precision)
    with FlopCounter() as counter:
        layer.forward(x)
    return counter.flops


def records_to_frame(records: Sequence[BenchRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records], columns=BENCH_COLUMNS)


def records_to_csv(records: Sequence[BenchRecord], path=None) -> Optional[str]:
    return records_to_frame(records).to_csv(path, index=False, float_format="%.6g", lineterminator="\n")


def records_from_csv(path_or_buffer) -> List[BenchRecord]:
    frame = pd.read_csv(path_or_buffer)
    missing = [c for c in BENCH_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError("Bench CSV is missing the columns: " + ", ".join(missing))
    records = []
    for row in frame.to_dict("records"):
        records.append(
            BenchRecord(
                variant=str(row["variant"]),
                n_dyad=int(row["n_dyad"]),
                f_in=int(row["f_in"]),
                f_out=int(row["f_out"]),
                batch=int(row["batch"]),
                fwd_ms=float(row["fwd_ms"]),
                bwd_ms=float(row["bwd_ms"]),
                total_ms=float(row["total_ms"]),
                speedup=float(row["speedup"]),
            )
        )
    return records


def summary(records: Sequence[BenchRecord], decimals: int = 3) -> pd.DataFrame:
    frame = records_to_frame(records)
    print(frame.round(decimals))
    return frame


def check_speedup_trend(
    records: Sequence[BenchRecord], min_width: int = 1024, min_n_dyad: int = 4
) -> bool:
    """
    Soft checks on measured speedups: nondecreasing with width for each Dyad variant, and above 1
    for n_dyad >= min_n_dyad at widths >= min_width. A failed check warns and returns False.
    """
    ok = True
    frame = records_to_frame([r for r in records if r.variant != "dense"])
    for (variant, n_dyad), group in frame.groupby(["variant", "n_dyad"]):
        speedups = group.sort_values("f_in")["speedup"].to_numpy()
        if np.any(speedups <= 0) or np.any(np.isnan(speedups)):
            warn(f"{variant} n_dyad={n_dyad}: non positive or missing speedup")
            ok = False
        if np.any(np.diff(speedups) < 0):
            warn(f"{variant} n_dyad={n_dyad}: speedup decreases with width {np.round(speedups, 3).tolist()}")
            ok = False
        if n_dyad >= min_n_dyad:
            slow = group[(group["f_in"] >= min_width) & (group["speedup"] <= 1.0)]
            if len(slow) > 0:
                warn(f"{variant} n_dyad={n_dyad}: no speedup at widths {slow['f_in'].tolist()}")
                ok = False
    return ok


def check_sparsity_trend(
    coarse: Sequence[BenchRecord], fine: Sequence[BenchRecord], min_width: int = 1536
) -> bool:
    """
    Soft check that more blocks give at least the same speedup: compares the records of a sweep
    at a higher n_dyad (fine) with those at a lower one (coarse), width by width.
    """
    ok = True
    coarse_by_width = {r.f_in: r for r in coarse if r.variant != "dense"}
    for record in fine:
        if record.variant == "dense" or record.f_in < min_width or record.f_in not in coarse_by_width:
            continue
        reference = coarse_by_width[record.f_in]
        if record.speedup < reference.speedup:
            warn(
                f"width {record.f_in}: n_dyad={record.n_dyad} speedup {record.speedup:.3f} "
                f"below n_dyad={reference.n_dyad} speedup {reference.speedup:.3f}"
            )
            ok = False
    return ok

