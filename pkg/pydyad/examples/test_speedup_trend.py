from pydyad.bench import check_sparsity_trend, check_speedup_trend, width_sweep
from pydyad.tensor_core import accumulation


def test_speedup_trend():
    """
    Speedup of Dyad-IT ff modules over dense ones across model widths. The published measurements
    are GPU timings; on a CPU only their ordering carries over: the speedup grows with the width,
    and n_dyad=8 is at least as fast as n_dyad=4 at large widths. Both trends are soft: a miss warns.
    :return:
    """
    with accumulation("blas"):
        coarse = width_sweep([768, 1024, 1536, 2048], n_dyad=4, batch=64, iters=10, warmup=2)
        fine = width_sweep([1536, 2048], n_dyad=8, batch=64, iters=10, warmup=2)

    assert len(coarse) == 8
    assert [r.variant for r in coarse] == ["dense", "dyad-it"] * 4
    assert all(r.speedup > 0 for r in coarse + fine)

    check_speedup_trend(coarse)
    check_sparsity_trend(coarse, fine)

    return True
