from typing import Union, Dict, Optional

LayerInfo = Dict[str, Optional[Union[str, int, bool]]]
ArchitectureInfo = Dict[str, int]


def layer_list(
    layer_name: Optional[str] = None,
) -> Union[LayerInfo, Dict[str, LayerInfo]]:
    """
    This function simply return a hardcoded list of layer presets or the information on a single preset.
    It can be modified to include new presets. The required format is the following:
    Name of the preset string: {
        "kind": "dense" or "dyad",
        "variant": None for dense layers, else one of "it", "ot", "dt",
        "n_dyad": None for dense layers, else the number of blocks per component,
        "fused_cat": True when both components run as a single batched product (IT only)
    }
    :type layer_name: Name of the preset to return
    """
    layer_list_var = {
        "Dense": {"kind": "dense", "variant": None, "n_dyad": None, "fused_cat": False},
        "Dyad-IT": {"kind": "dyad", "variant": "it", "n_dyad": 4, "fused_cat": False},
        "Dyad-OT": {"kind": "dyad", "variant": "ot", "n_dyad": 4, "fused_cat": False},
        "Dyad-DT": {"kind": "dyad", "variant": "dt", "n_dyad": 4, "fused_cat": False},
        "Dyad-IT-8": {"kind": "dyad", "variant": "it", "n_dyad": 8, "fused_cat": False},
        "Dyad-IT-Cat": {"kind": "dyad", "variant": "it", "n_dyad": 4, "fused_cat": True},
    }

    if layer_name is None:
        return layer_list_var
    try:
        return layer_list_var[layer_name]
    except KeyError:
        raise KeyError(
            "Invalid layer name '" + str(layer_name) + "', the available names are: "
            + ", ".join(list(layer_list_var.keys()))
        ) from None


def architecture_list(
    architecture_name: Optional[str] = None,
) -> Union[ArchitectureInfo, Dict[str, ArchitectureInfo]]:
    """
    Hardcoded transformer shapes whose ff modules are candidates for Dyad replacement.
    Each ff module holds two linear layers: d_model -> ff_dim and ff_dim -> d_model.
    "OPT-1.3b-6L" is the 1.3b width capped to 6 blocks, the setting used for width profiling.
    :type architecture_name: Name of the architecture to return
    """
    architecture_list_var = {
        "OPT-125m": {"d_model": 768, "ff_dim": 3072, "n_layers": 12},
        "OPT-350m": {"d_model": 1024, "ff_dim": 4096, "n_layers": 24},
        "OPT-1.3b-6L": {"d_model": 2048, "ff_dim": 8192, "n_layers": 6},
        "Pythia-160m": {"d_model": 768, "ff_dim": 3072, "n_layers": 12},
    }

    if architecture_name is None:
        return architecture_list_var
    try:
        return architecture_list_var[architecture_name]
    except KeyError:
        raise KeyError(
            "Invalid architecture name '" + str(architecture_name) + "', the available names are: "
            + ", ".join(list(architecture_list_var.keys()))
        ) from None
