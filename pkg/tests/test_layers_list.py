from pydyad.layers_list import architecture_list, layer_list
import pytest


class TestLayersList:

    def test_layer_list_return_single_layer(self):
        layer = layer_list("Dyad-IT")
        assert layer == {"kind": "dyad", "variant": "it", "n_dyad": 4, "fused_cat": False}

    def test_layer_list_return_all_layers(self):
        layers = layer_list()
        assert isinstance(layers, dict)
        assert "Dense" in layers
        assert all(info["variant"] == "it" for info in layers.values() if info["fused_cat"])

    def test_layer_list_error(self):
        with pytest.raises(KeyError):
            layer_list("")


class TestArchitectureList:

    def test_architecture_list_return_single_architecture(self):
        architecture = architecture_list("OPT-125m")
        assert architecture == {"d_model": 768, "ff_dim": 3072, "n_layers": 12}

    def test_architecture_list_return_all_architectures(self):
        architectures = architecture_list()
        assert isinstance(architectures, dict)
        assert all(a["ff_dim"] == 4 * a["d_model"] for a in architectures.values())

    def test_architecture_list_error(self):
        with pytest.raises(KeyError):
            architecture_list("GPT-5")
