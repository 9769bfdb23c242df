import io
import math
import warnings

import pytest

from pydyad.bench import (
    BENCH_COLUMNS,
    BenchRecord,
    check_sparsity_trend,
    check_speedup_trend,
    compared_ms,
    count_forward_flops,
    format_ms,
    records_from_csv,
    records_to_csv,
    time_ff_pair,
    time_layer,
    variant_tag,
    width_sweep,
)
from pydyad.exceptions import DivisibilityError
from pydyad.layers import DenseLayer, DyadConfig, init_uniform
from pydyad.tensor_core import flop_count_dense, flop_count_dyad


def record(variant="dyad-it", n_dyad=4, width=768, total_ms=1.0, speedup=1.5):
    return BenchRecord(variant, n_dyad, width, 4 * width, 64, total_ms / 4, 3 * total_ms / 4, total_ms, speedup)


class TestTimeLayer:
    @pytest.fixture()
    def dense(self):
        return DenseLayer.init_uniform(8, 4, seed=0)

    @pytest.fixture()
    def dyad(self):
        return init_uniform(DyadConfig(2, 2, 4, "it"), seed=0)

    def test_dense_record(self, dense):
        result = time_layer(dense, batch=2, warmup_iters=1, timed_iters=10)
        assert result.variant == "dense"
        assert result.n_dyad == 1
        assert (result.f_in, result.f_out, result.batch) == (4, 8, 2)
        assert result.fwd_ms > 0
        assert result.bwd_ms > 0
        assert result.total_ms == pytest.approx(result.fwd_ms + result.bwd_ms)
        assert result.speedup == 1.0

    def test_dyad_without_baseline(self, dyad):
        result = time_layer(dyad, batch=2, warmup_iters=1, timed_iters=10)
        assert result.variant == "dyad-it"
        assert result.n_dyad == 2
        assert math.isnan(result.speedup)

    def test_speedup_against_baseline(self, dense, dyad):
        baseline = time_layer(dense, batch=2, warmup_iters=1, timed_iters=10)
        result = time_layer(dyad, batch=2, warmup_iters=1, timed_iters=10, baseline=baseline)
        assert result.speedup > 0
        assert result.speedup == pytest.approx(baseline.total_ms / result.total_ms)

    def test_dense_against_itself(self, dense):
        baseline = time_layer(dense, batch=2, warmup_iters=5, timed_iters=200)
        result = time_layer(dense, batch=2, warmup_iters=5, timed_iters=200, baseline=baseline)
        assert result.variant == "dense"
        assert result.speedup > 0
        if not 0.9 <= result.speedup <= 1.1:
            warnings.warn(f"Dense timed against itself gives a speedup of {result.speedup:.2f}, expected about 1")

    @pytest.mark.parametrize("warmup, timed, batch",[(0, 10, 1), (1, 9, 1), (1, 10, 0)])
    def test_invalid_iterations(self, dense, warmup, timed, batch):
        with pytest.raises(ValueError):
            time_layer(dense, batch=batch, warmup_iters=warmup, timed_iters=timed)

    def test_variant_tags(self, dense):
        assert variant_tag(dense) == "dense"
        for variant in ("it", "ot", "dt"):
            assert variant_tag(init_uniform(DyadConfig(2, 2, 2, variant))) == "dyad-" + variant
        assert variant_tag(init_uniform(DyadConfig(2, 2, 2, "it", fused_cat=True))) == "dyad-it-cat"

    def test_ff_pair(self):
        result = time_ff_pair("Dyad-IT", 8, n_dyad=2, batch=2, iters=10, warmup=1)
        assert (result.f_in, result.f_out, result.n_dyad) == (8, 32, 2)
        assert result.total_ms == pytest.approx(result.fwd_ms + result.bwd_ms)


class TestFormatting:
    def test_format_ms(self):
        assert format_ms(12.345) == "12.3 ms"
        assert format_ms(0.5) == "0.500 ms"
        assert format_ms(0.001) == "1000 ns"

    def test_compared_ms(self):
        assert compared_ms(1.0, 2.0) == "1.000 ms (-50.0%, 2.00x faster)"
        assert compared_ms(4.0, 2.0) == "4.000 ms (+100.0%, 0.50x slower)"


class TestWidthSweep:
    def test_records_per_width(self):
        records = width_sweep([8, 16], n_dyad=2, batch=2, iters=10, warmup=1)
        assert [r.variant for r in records] == ["dense", "dyad-it", "dense", "dyad-it"]
        assert [r.f_in for r in records] == [8, 8, 16, 16]
        assert [r.f_out for r in records] == [32, 32, 64, 64]
        assert records[0].n_dyad == 1
        assert records[1].n_dyad == 2
        for dyad in records[1::2]:
            assert dyad.speedup > 0
            assert math.isfinite(dyad.speedup)

    def test_variant_preset(self):
        records = width_sweep([8], n_dyad=2, batch=1, iters=10, warmup=1, layer_name="Dyad-DT")
        assert records[1].variant == "dyad-dt"

    def test_empty(self):
        assert width_sweep([]) == []
        assert records_to_csv([]) == ",".join(BENCH_COLUMNS) + "\n"

    def test_indivisible_width(self):
        with pytest.raises(DivisibilityError) as error:
            width_sweep([768, 770], n_dyad=4, iters=10, warmup=1)
        assert error.value.f_in == 770


class TestCsv:
    def test_round_trip(self):
        records = [record("dense", 1, speedup=1.0), record(total_ms=0.25, speedup=0.5)]
        content = records_to_csv(records)
        assert content.splitlines()[0] == ",".join(BENCH_COLUMNS)
        assert records_from_csv(io.StringIO(content)) == records

    def test_missing_speedup_is_empty(self):
        content = records_to_csv([record(speedup=float("nan"))])
        assert content.splitlines()[1].endswith(",")
        assert math.isnan(records_from_csv(io.StringIO(content))[0].speedup)

    def test_missing_columns(self):
        with pytest.raises(ValueError):
            records_from_csv(io.StringIO("variant,n_dyad\ndense,1\n"))


class TestTrendChecks:
    def test_increasing_speedup_passes(self):
        records = [record(width=w, speedup=s) for w, s in [(768, 0.9), (1024, 1.1), (2048, 1.4)]]
        with warnings.catch_warnings():
            warnings.simplefilter("error", UserWarning)
            assert check_speedup_trend(records)

    def test_decreasing_speedup_warns(self):
        records = [record(width=w, speedup=s) for w, s in [(768, 1.5), (1024, 1.2)]]
        with pytest.warns(UserWarning, match="decreases"):
            assert not check_speedup_trend(records)

    def test_no_speedup_at_large_width_warns(self):
        records = [record(width=w, speedup=s) for w, s in [(1024, 0.8), (2048, 0.9)]]
        with pytest.warns(UserWarning, match="no speedup"):
            assert not check_speedup_trend(records)

    def test_dense_rows_are_ignored(self):
        records = [record("dense", 1, width=w, speedup=1.0) for w in (1024, 2048)]
        assert check_speedup_trend(records)

    def test_sparsity_trend(self):
        coarse = [record(n_dyad=4, width=w, speedup=s) for w, s in [(1024, 1.2), (2048, 1.5)]]
        fine = [record(n_dyad=8, width=w, speedup=s) for w, s in [(1024, 1.0), (2048, 1.9)]]
        assert check_sparsity_trend(coarse, fine)
        with pytest.warns(UserWarning):
            assert not check_sparsity_trend(coarse, fine, min_width=1024)


class TestFlops:
    def test_dense(self):
        assert count_forward_flops(DenseLayer.init_uniform(8, 4), batch=3) == flop_count_dense(8, 4, 3)

    @pytest.mark.parametrize("variant, fused_cat", [("it", False), ("ot", False), ("dt", False), ("it", True)])
    def test_dyad(self, variant, fused_cat):
        layer = init_uniform(DyadConfig(4, 2, 3, variant, fused_cat=fused_cat))
        assert count_forward_flops(layer, batch=5) == flop_count_dyad(4, 3, 2, 5)

    def test_ratio(self):
        dense = count_forward_flops(DenseLayer.init_uniform(64, 64))
        dyad = count_forward_flops(init_uniform(DyadConfig(8, 8, 8)))
        assert dense / dyad == 4
