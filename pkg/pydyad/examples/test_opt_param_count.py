from pydyad.layers import DyadConfig, ff_param_savings, param_count
from pydyad.layers_list import architecture_list


def test_opt_param_count():
    """
    Weights saved by replacing both linear layers of every ff module of OPT-125m (d_model 768,
    ff_dim 3072, 12 blocks) with Dyad-IT layers at n_dyad=4.
    The published non-embedding parameter counts drop from 86.63M with dense layers to 58.32M with
    Dyad layers; the saving computed here has to match that drop to the reported precision.
    :return:
    """
    architecture = architecture_list("OPT-125m")
    up = DyadConfig.from_dims(architecture["ff_dim"], architecture["d_model"], 4, has_bias=False)

    assert param_count(up, dense=True) == 2359296
    assert param_count(up) == 1179648
    assert ff_param_savings("OPT-125m", 4) == 28311552
    assert abs(ff_param_savings("OPT-125m", 4) / 1e6 - (86.63 - 58.32)) < 0.01

    return True
