from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Union
from warnings import warn

import numpy as np

from .exceptions import DimensionMismatchError, DivisibilityError, PrecisionMismatchError, ShapeMismatchError
from .layers_list import LayerInfo, architecture_list, layer_list
from .tensor_core import (
    Matrix,
    Tensor3,
    add,
    add_bias,
    bmm,
    concatenate0,
    get_dtype,
    matmul,
    narrow0,
    reshape2,
    reshape3,
    transpose,
    transpose01,
    transpose12,
)

VARIANTS = ("it", "ot", "dt")

Layer = Union["DenseLayer", "DyadLayer"]


@dataclass(frozen=True)
class DyadConfig:
    n_dyad: int
    n_in: int
    n_out: int
    variant: str = "it"
    has_bias: bool = True
    fused_cat: bool = False
    precision: str = "f64"

    def __post_init__(self):
        for name in ("n_dyad", "n_in", "n_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.variant not in VARIANTS:
            raise ValueError(
                "Invalid variant '" + str(self.variant) + "', the available variants are: " + ", ".join(VARIANTS)
            )
        if self.fused_cat and self.variant != "it":
            raise ValueError("The -Cat fusion is only defined for the IT variant")
        get_dtype(self.precision)

    @classmethod
    def from_dims(cls, f_out: int, f_in: int, n_dyad: int, **kwargs) -> DyadConfig:
        validate_dims(f_out, f_in, n_dyad)
        return cls(n_dyad=n_dyad, n_in=f_in // n_dyad, n_out=f_out // n_dyad, **kwargs)

    @property
    def f_in(self) -> int:
        return self.n_dyad * self.n_in

    @property
    def f_out(self) -> int:
        return self.n_dyad * self.n_out

    @property
    def weight_shape(self) -> (int, int, int):
        return self.n_dyad, self.n_out, self.n_in

    @property
    def name(self) -> str:
        return "Dyad-" + self.variant.upper() + ("-Cat" if self.fused_cat else "")


@dataclass(frozen=True)
class DyadGradients:
    d_w1: Tensor3
    d_w2: Tensor3
    d_bias: Optional[Matrix]
    d_x: Optional[Matrix]


@dataclass(frozen=True)
class DenseGradients:
    d_w: Matrix
    d_bias: Optional[Matrix]
    d_x: Optional[Matrix]


class DyadLayer:
    """
    A Dyad layer: a block diagonal component w1 plus a block transposed component w2, both packed as
    (n_dyad, n_out, n_in) tensors, and an optional (f_out x 1) bias. The effective weight matrix is
    the sum of both materialized components; positions where the two patterns overlap add up.
    """

    def __init__(self, config: DyadConfig, w1: Tensor3, w2: Tensor3, bias: Optional[Matrix] = None):
        for name, weight in (("w1", w1), ("w2", w2)):
            if weight.shape != config.weight_shape:
                raise ShapeMismatchError(f"{name} has shape {weight.shape}, expected {config.weight_shape}")
            if weight.precision != config.precision:
                raise PrecisionMismatchError(f"{name} is {weight.precision}, the layer is {config.precision}")
        if config.has_bias != (bias is not None):
            raise ShapeMismatchError("A bias must be given if and only if the config has_bias")
        if bias is not None and bias.shape != (config.f_out, 1):
            raise ShapeMismatchError(f"bias has shape {bias.shape}, expected ({config.f_out}, 1)")
        if bias is not None and bias.precision != config.precision:
            raise PrecisionMismatchError(f"bias is {bias.precision}, the layer is {config.precision}")

        self.config: DyadConfig = config
        self.w1: Tensor3 = w1
        self.w2: Tensor3 = w2
        self.bias: Optional[Matrix] = bias

    @classmethod
    def init_uniform(cls, config: DyadConfig, seed: int = 0) -> DyadLayer:
        # Same bound for weights and bias, drawn in the order w1, w2, bias.
        rng = np.random.default_rng(seed)
        k = 1.0 / float(np.sqrt(config.n_in * config.n_dyad))
        dtype = get_dtype(config.precision)
        w1 = Tensor3.from_numpy(rng.uniform(-k, k, size=config.weight_shape).astype(dtype))
        w2 = Tensor3.from_numpy(rng.uniform(-k, k, size=config.weight_shape).astype(dtype))
        bias = None
        if config.has_bias:
            bias = Matrix(rng.uniform(-k, k, size=(config.f_out, 1)).astype(dtype))
        return cls(config, w1, w2, bias)

    def replace(
        self, w1: Optional[Tensor3] = None, w2: Optional[Tensor3] = None, bias: Optional[Matrix] = None
    ) -> DyadLayer:
        return DyadLayer(
            self.config,
            self.w1 if w1 is None else w1,
            self.w2 if w2 is None else w2,
            self.bias if bias is None else bias,
        )

    @functools.cached_property
    def stacked_weights(self) -> Tensor3:
        return concatenate0([self.w1, self.w2])

    @property
    def f_in(self) -> int:
        return self.config.f_in

    @property
    def f_out(self) -> int:
        return self.config.f_out

    @property
    def precision(self) -> str:
        return self.config.precision

    @property
    def param_count(self) -> int:
        return param_count(self.config)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {"w1": self.w1.values, "w2": self.w2.values}
        if self.bias is not None:
            params["bias"] = self.bias.values
        return params

    def forward(self, x: Matrix) -> Matrix:
        if self.config.fused_cat:
            return forward_cat(self, x)
        return _FORWARDS[self.config.variant](self, x)

    def backward(self, x: Matrix, d_y: Matrix, need_input_grad: bool = True) -> DyadGradients:
        return backward(self, x, d_y, need_input_grad)

    def __repr__(self) -> str:
        c = self.config
        return f"DyadLayer({c.name}, n_dyad={c.n_dyad}, n_in={c.n_in}, n_out={c.n_out}, precision={c.precision})"


class DenseLayer:
    def __init__(self, w: Matrix, bias: Optional[Matrix] = None):
        if bias is not None:
            if bias.shape != (w.rows, 1):
                raise ShapeMismatchError(f"bias has shape {bias.shape}, expected ({w.rows}, 1)")
            if bias.precision != w.precision:
                raise PrecisionMismatchError(f"bias is {bias.precision}, the weights are {w.precision}")
        self.w: Matrix = w
        self.bias: Optional[Matrix] = bias

    @classmethod
    def init_uniform(
        cls, f_out: int, f_in: int, seed: int = 0, has_bias: bool = True, precision: str = "f64"
    ) -> DenseLayer:
        rng = np.random.default_rng(seed)
        k = 1.0 / float(np.sqrt(f_in))
        dtype = get_dtype(precision)
        w = Matrix(rng.uniform(-k, k, size=(f_out, f_in)).astype(dtype))
        bias = Matrix(rng.uniform(-k, k, size=(f_out, 1)).astype(dtype)) if has_bias else None
        return cls(w, bias)

    def replace(self, w: Optional[Matrix] = None, bias: Optional[Matrix] = None) -> DenseLayer:
        return DenseLayer(self.w if w is None else w, self.bias if bias is None else bias)

    @property
    def f_in(self) -> int:
        return self.w.cols

    @property
    def f_out(self) -> int:
        return self.w.rows

    @property
    def has_bias(self) -> bool:
        return self.bias is not None

    @property
    def precision(self) -> str:
        return self.w.precision

    @property
    def param_count(self) -> int:
        return dense_param_count(self.f_out, self.f_in, self.has_bias)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {"w": self.w.values}
        if self.bias is not None:
            params["bias"] = self.bias.values
        return params

    def forward(self, x: Matrix) -> Matrix:
        return forward_dense(self, x)

    def backward(self, x: Matrix, d_y: Matrix, need_input_grad: bool = True) -> DenseGradients:
        return backward_dense(self, x, d_y, need_input_grad)

    def __repr__(self) -> str:
        return f"DenseLayer(f_out={self.f_out}, f_in={self.f_in}, precision={self.precision})"


def init_uniform(config: DyadConfig, seed: int = 0) -> DyadLayer:
    return DyadLayer.init_uniform(config, seed)


def validate_dims(f_out: int, f_in: int, n_dyad: int) -> None:
    if n_dyad < 1 or f_out < 1 or f_in < 1:
        raise ValueError(f"Dimensions must be positive, got f_out={f_out}, f_in={f_in}, n_dyad={n_dyad}")
    if f_out % n_dyad or f_in % n_dyad:
        raise DivisibilityError(f_out, f_in, n_dyad)


def param_count(config: DyadConfig, dense: bool = False) -> int:
    """
    Number of trainable scalars of a Dyad layer, or with dense=True of the dense layer of the same
    full dimensions. Weights alone give a Dyad/dense ratio of exactly 2/n_dyad.
    """
    if dense:
        weights = config.n_dyad ** 2 * config.n_out * config.n_in
    else:
        weights = 2 * config.n_dyad * config.n_out * config.n_in
    return weights + (config.f_out if config.has_bias else 0)


def dense_param_count(f_out: int, f_in: int, has_bias: bool = True) -> int:
    return f_out * f_in + (f_out if has_bias else 0)


def ff_param_savings(architecture_name: str, n_dyad: int = 4) -> int:
    """
    Weights removed when both linear layers of every ff module of an architecture are replaced by
    Dyad layers. Biases are kept out of the count since both layer kinds carry the same bias.
    """
    architecture = architecture_list(architecture_name)
    savings = 0
    for f_out, f_in in (
        (architecture["ff_dim"], architecture["d_model"]),
        (architecture["d_model"], architecture["ff_dim"]),
    ):
        config = DyadConfig.from_dims(f_out, f_in, n_dyad, has_bias=False)
        savings += param_count(config, dense=True) - param_count(config)
    return savings * architecture["n_layers"]


def _require_variant(layer: DyadLayer, variant: str) -> None:
    if layer.config.variant != variant:
        raise ValueError(f"This forward pass is for the {variant.upper()} variant, the layer is {layer.config.name}")


def _check_input(layer: DyadLayer, x: Matrix) -> None:
    if x.rows != layer.config.f_in:
        raise DimensionMismatchError(
            f"Input has {x.rows} rows, the layer expects n_dyad*n_in = {layer.config.f_in}", axis="rows"
        )
    if x.precision != layer.config.precision:
        raise PrecisionMismatchError(f"Input is {x.precision}, the layer is {layer.config.precision}")


def _block_view(x: Matrix, n_dyad: int, n: int) -> Tensor3:
    return reshape3(x, n_dyad, n, x.cols)


def _strided_view(x: Matrix, n_dyad: int, n: int) -> Tensor3:
    # block d, row k of the view is row k*n_dyad + d of x: a permutation without data movement
    return transpose01(reshape3(x, n, n_dyad, x.cols))


def _unpermute_rows(z: Tensor3) -> Matrix:
    # row k*n_dyad + d of the result is z[d, k]
    n_dyad, n_out, batch = z.shape
    return reshape2(transpose01(z).materialize(), n_dyad * n_out, batch)


def _blockdiag_output(layer: DyadLayer, x: Matrix) -> Matrix:
    c = layer.config
    return reshape2(bmm(layer.w1, _block_view(x, c.n_dyad, c.n_in)), c.f_out, x.cols)


def _blocktrans_output(layer: DyadLayer, x: Matrix) -> Matrix:
    c = layer.config
    if c.variant == "ot":
        x2 = _block_view(x, c.n_dyad, c.n_in)
    else:
        x2 = _strided_view(x, c.n_dyad, c.n_in)
    z = bmm(layer.w2, x2)
    if c.variant == "it":
        return reshape2(z, c.f_out, x.cols)
    return _unpermute_rows(z)


def _forward_variant(layer: DyadLayer, x: Matrix, variant: str) -> Matrix:
    _require_variant(layer, variant)
    _check_input(layer, x)
    return add_bias(add(_blockdiag_output(layer, x), _blocktrans_output(layer, x)), layer.bias)


def forward_it(layer: DyadLayer, x: Matrix) -> Matrix:
    return _forward_variant(layer, x, "it")


def forward_ot(layer: DyadLayer, x: Matrix) -> Matrix:
    return _forward_variant(layer, x, "ot")


def forward_dt(layer: DyadLayer, x: Matrix) -> Matrix:
    return _forward_variant(layer, x, "dt")


def forward_cat(layer: DyadLayer, x: Matrix) -> Matrix:
    """
    IT forward pass with both components fused into one batched product over 2*n_dyad blocks.
    The strided view of the second component's input is copied so it can be concatenated.
    """
    _require_variant(layer, "it")
    _check_input(layer, x)
    c = layer.config
    activations = concatenate0(
        [_block_view(x, c.n_dyad, c.n_in), _strided_view(x, c.n_dyad, c.n_in).materialize()]
    )
    out = bmm(layer.stacked_weights, activations)
    y1 = reshape2(narrow0(out, 0, c.n_dyad), c.f_out, x.cols)
    y2 = reshape2(narrow0(out, c.n_dyad, 2 * c.n_dyad), c.f_out, x.cols)
    return add_bias(add(y1, y2), layer.bias)


def forward_dense(layer: DenseLayer, x: Matrix) -> Matrix:
    if x.rows != layer.f_in:
        raise DimensionMismatchError(f"Input has {x.rows} rows, the layer expects {layer.f_in}", axis="rows")
    return add_bias(matmul(layer.w, x), layer.bias)


_FORWARDS: Dict[str, Callable[[DyadLayer, Matrix], Matrix]] = {
    "it": forward_it,
    "ot": forward_ot,
    "dt": forward_dt,
}


def _bias_gradient(d_y: Matrix) -> Matrix:
    return Matrix(np.sum(d_y.values, axis=1, keepdims=True))


def backward(layer: DyadLayer, x: Matrix, d_y: Matrix, need_input_grad: bool = True) -> DyadGradients:
    """
    Gradients of a scalar loss with respect to w1, w2, the bias and the input, given d_y = dL/dY.
    Every reshape or transpose of the forward pass is a permutation, its adjoint is the inverse view.
    """
    _check_input(layer, x)
    c = layer.config
    batch = x.cols
    if d_y.shape != (c.f_out, batch):
        raise DimensionMismatchError(f"d_y has shape {d_y.shape}, expected ({c.f_out}, {batch})", axis="rows")

    x1 = _block_view(x, c.n_dyad, c.n_in)
    dy_blocks = reshape3(d_y, c.n_dyad, c.n_out, batch)
    d_w1 = bmm(dy_blocks, transpose12(x1))

    x2 = x1 if c.variant == "ot" else _strided_view(x, c.n_dyad, c.n_in)
    if c.variant == "it":
        d_z = dy_blocks
    else:
        d_z = transpose01(reshape3(d_y, c.n_out, c.n_dyad, batch))
    d_w2 = bmm(d_z, transpose12(x2))

    d_x = None
    if need_input_grad:
        d_x1 = reshape2(bmm(transpose12(layer.w1), dy_blocks), c.f_in, batch)
        d_x2_blocks = bmm(transpose12(layer.w2), d_z)
        if c.variant == "ot":
            d_x2 = reshape2(d_x2_blocks, c.f_in, batch)
        else:
            d_x2 = reshape2(transpose01(d_x2_blocks).materialize(), c.f_in, batch)
        d_x = add(d_x1, d_x2)

    d_bias = _bias_gradient(d_y) if c.has_bias else None
    return DyadGradients(d_w1=d_w1, d_w2=d_w2, d_bias=d_bias, d_x=d_x)


def backward_dense(layer: DenseLayer, x: Matrix, d_y: Matrix, need_input_grad: bool = True) -> DenseGradients:
    if x.rows != layer.f_in:
        raise DimensionMismatchError(f"Input has {x.rows} rows, the layer expects {layer.f_in}", axis="rows")
    if d_y.shape != (layer.f_out, x.cols):
        raise DimensionMismatchError(
            f"d_y has shape {d_y.shape}, expected ({layer.f_out}, {x.cols})", axis="rows"
        )
    d_w = matmul(d_y, transpose(x))
    d_x = matmul(transpose(layer.w), d_y) if need_input_grad else None
    d_bias = _bias_gradient(d_y) if layer.has_bias else None
    return DenseGradients(d_w=d_w, d_bias=d_bias, d_x=d_x)


class LayersManager:
    def __init__(self, layers_source: str = "hardcoded"):
        self.available_layers: Dict[str, LayerInfo] = self.get_available_layers(layers_source)
        self.layers: Dict[str, LayerGenerator] = {}

    def initialize_layers(self, layers_name: Union[List[str], str, None] = None) -> LayersManager:
        if layers_name is not None:
            if type(layers_name) == str:
                layers_name = [layers_name]
            for layer in layers_name:
                if self.get_layer_info(layer) is not None:
                    self.layers[layer] = LayerGenerator(layer, self.get_layer_info(layer))
        else:
            for layer in self.available_layers:
                self.layers[layer] = LayerGenerator(layer, self.get_layer_info(layer))

        if len(self.layers) == 0:
            warn("No layer initialized")

        return self

    def build(
        self,
        layer_name: str,
        f_in: int,
        f_out: int,
        seed: int = 0,
        precision: str = "f32",
        has_bias: bool = True,
        n_dyad: Optional[int] = None,
    ) -> Layer:
        return self.layers[layer_name].build(f_in, f_out, seed, precision, has_bias, n_dyad)

    @staticmethod
    def get_available_layers(layers_source: str = "hardcoded") -> Dict[str, LayerInfo]:
        list_of_layers: Dict[str, LayerInfo] = {}
        if layers_source == "hardcoded":
            list_of_layers = layer_list()
        return list_of_layers

    def get_layer_info(self, layer_name: str) -> Optional[LayerInfo]:
        if layer_name in self.available_layers:
            return self.available_layers[layer_name]
        else:
            warn("Layer name not found, try get_available_layers() for a list of available layers")
            return None

    @property
    def number_of_layers(self) -> int:
        return len(list(self.available_layers.keys()))

    @property
    def initialized_layers_list(self) -> List[str]:
        return list(self.layers.keys())


class LayerGenerator:
    def __init__(self, layer_name: str, layer_info: LayerInfo):
        self.name: str = layer_name
        self.kind: str = layer_info["kind"]
        self.variant: Optional[str] = layer_info["variant"]
        self.n_dyad: Optional[int] = layer_info["n_dyad"]
        self.fused_cat: bool = bool(layer_info["fused_cat"])

    def build(
        self,
        f_in: int,
        f_out: int,
        seed: int = 0,
        precision: str = "f32",
        has_bias: bool = True,
        n_dyad: Optional[int] = None,
    ) -> Layer:
        if self.kind == "dense":
            return DenseLayer.init_uniform(f_out, f_in, seed, has_bias, precision)
        config = DyadConfig.from_dims(
            f_out,
            f_in,
            n_dyad if n_dyad is not None else self.n_dyad,
            variant=self.variant,
            has_bias=has_bias,
            fused_cat=self.fused_cat,
            precision=precision,
        )
        return DyadLayer.init_uniform(config, seed)
