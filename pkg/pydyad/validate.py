import os

from pydyad.examples.test_connectivity_table import test_connectivity_table
from pydyad.examples.test_ff_reference import test_ff_reference
from pydyad.examples.test_flop_ratio import test_flop_ratio
from pydyad.examples.test_mnist_parity import test_mnist_parity
from pydyad.examples.test_opt_param_count import test_opt_param_count
from pydyad.examples.test_speedup_trend import test_speedup_trend


def dyad_validate(include_timings: bool = True):

    test_opt_param_count()
    test_flop_ratio()
    test_connectivity_table()
    if include_timings:
        test_speedup_trend()
        test_ff_reference()
    if os.environ.get("MNIST_DIR"):
        test_mnist_parity()

    return True
