from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import block_diag

from .exceptions import ShapeMismatchError
from .layers import VARIANTS, DenseLayer, DyadConfig, DyadGradients, DyadLayer
from .tensor_core import Matrix, Tensor3, add, add_bias, get_dtype, matmul, transpose

CONNECTIVITY_COLUMNS = ["i", "j", "same_block", "path_count", "dense_count"]


def permutation_matrix(n_dyad: int, n: int, precision: str = "f64") -> Matrix:
    """
    Square permutation matrix of size n_dyad*n with a single one per row, at column
    n_dyad*(i mod n) + i div n for row i.
    """
    size = n_dyad * n
    rows = np.arange(size)
    p = np.zeros((size, size), dtype=get_dtype(precision))
    p[rows, n_dyad * (rows % n) + rows // n] = 1
    return Matrix(p)


def input_permutation(n_dyad: int, n_in: int, precision: str = "f64") -> Matrix:
    # S such that S.x is the flattened strided view transpose01(reshape3(x, n_in, n_dyad, batch))
    return transpose(permutation_matrix(n_in, n_dyad, precision))


def output_permutation(n_dyad: int, n_out: int, precision: str = "f64") -> Matrix:
    # R such that R.z puts row d*n_out + k of the block output at row k*n_dyad + d
    return transpose(permutation_matrix(n_dyad, n_out, precision))


def materialize_blockdiag(w: Tensor3) -> Matrix:
    return Matrix(block_diag(*w.values))


def extract_blockdiag(m: Matrix, n_dyad: int, n_out: int, n_in: int) -> Tensor3:
    if m.shape != (n_dyad * n_out, n_dyad * n_in):
        raise ShapeMismatchError(
            f"A {m.rows}x{m.cols} matrix has no ({n_dyad}, {n_out}, {n_in}) block diagonal"
        )
    values = m.values
    blocks = [values[i * n_out:(i + 1) * n_out, i * n_in:(i + 1) * n_in] for i in range(n_dyad)]
    return Tensor3.from_numpy(np.stack(blocks))


def _permute_component(values: np.ndarray, config: DyadConfig) -> np.ndarray:
    # permutation products only move entries, numpy's matmul is exact here
    if config.variant in ("it", "dt"):
        values = values @ input_permutation(config.n_dyad, config.n_in, config.precision).values
    if config.variant in ("ot", "dt"):
        values = output_permutation(config.n_dyad, config.n_out, config.precision).values @ values
    return values


def materialize_components(layer: DyadLayer) -> Tuple[Matrix, Matrix]:
    """
    Dense (f_out x f_in) matrices of the two components. The first is block diagonal, the second
    is the block diagonal of w2 with the variant's permutations applied on the input side (IT),
    the output side (OT) or both (DT).
    """
    w1 = materialize_blockdiag(layer.w1)
    w2 = Matrix(_permute_component(materialize_blockdiag(layer.w2).values, layer.config))
    return w1, w2


def materialize_variant(layer: DyadLayer) -> Matrix:
    w1, w2 = materialize_components(layer)
    return add(w1, w2)


def to_dense_layer(layer: DyadLayer) -> DenseLayer:
    return DenseLayer(materialize_variant(layer), layer.bias)


def oracle_forward(layer: DyadLayer, x: Matrix) -> Matrix:
    """
    Reference output computed with dense products, one per component. Under ordered accumulation
    it reproduces the packed forward pass bit for bit, since every skipped term is an exact zero.
    """
    w1, w2 = materialize_components(layer)
    return add_bias(add(matmul(w1, x), matmul(w2, x)), layer.bias)


def oracle_gradients(layer: DyadLayer, x: Matrix, d_y: Matrix) -> DyadGradients:
    c = layer.config
    g = d_y.values @ x.values.T
    d_w1 = extract_blockdiag(Matrix(g), c.n_dyad, c.n_out, c.n_in)

    # undo the component permutations: G -> R^T G S^T
    g2 = g
    if c.variant in ("it", "dt"):
        g2 = g2 @ input_permutation(c.n_dyad, c.n_in, c.precision).values.T
    if c.variant in ("ot", "dt"):
        g2 = output_permutation(c.n_dyad, c.n_out, c.precision).values.T @ g2
    d_w2 = extract_blockdiag(Matrix(g2), c.n_dyad, c.n_out, c.n_in)

    d_x = Matrix(materialize_variant(layer).values.T @ d_y.values)
    d_bias = Matrix(d_y.values.sum(axis=1, keepdims=True)) if c.has_bias else None
    return DyadGradients(d_w1=d_w1, d_w2=d_w2, d_bias=d_bias, d_x=d_x)


def half_squared_norm(y: Matrix) -> float:
    return 0.5 * float(np.sum(y.values.astype(np.float64) ** 2))


def finite_difference_gradients(layer: DyadLayer, x: Matrix, h: float = 1e-6) -> Dict[str, np.ndarray]:
    """
    Central finite differences of the loss 1/2 ||forward(x)||^2 with respect to every parameter
    entry and every input entry. The analytical counterpart is backward(layer, x, forward(x)).
    """

    def loss(current: DyadLayer, inputs: Matrix) -> float:
        return half_squared_norm(current.forward(inputs))

    def perturbed(values: np.ndarray, index, step: float) -> np.ndarray:
        shifted = values.copy()
        shifted[index] += step
        return shifted

    gradients: Dict[str, np.ndarray] = {}
    for name, values in layer.parameters().items():
        grad = np.zeros_like(values)
        for index in np.ndindex(values.shape):
            losses = []
            for step in (h, -h):
                shifted = perturbed(values, index, step)
                if name == "bias":
                    current = layer.replace(bias=Matrix(shifted))
                else:
                    current = layer.replace(**{name: Tensor3.from_numpy(shifted)})
                losses.append(loss(current, x))
            grad[index] = (losses[0] - losses[1]) / (2 * h)
        gradients[name] = grad

    grad_x = np.zeros_like(x.values)
    for index in np.ndindex(x.shape):
        plus = loss(layer, Matrix(perturbed(x.values, index, h)))
        minus = loss(layer, Matrix(perturbed(x.values, index, -h)))
        grad_x[index] = (plus - minus) / (2 * h)
    gradients["x"] = grad_x
    return gradients


class ConnectivityTable:
    """
    Path counts between every input i and output j of two stacked square Dyad layers, next to the
    count of the equivalent stacked dense layers. Pairs in the same block of n features are
    reported separately from pairs across blocks.
    """

    def __init__(self, table: pd.DataFrame, n_dyad: int, n: int, variant: str):
        self.table: pd.DataFrame = table
        self.n_dyad: int = n_dyad
        self.n: int = n
        self.variant: str = variant

    def __len__(self) -> int:
        return len(self.table)

    @property
    def dense_count(self) -> int:
        return self.n_dyad * self.n

    @property
    def same_block_mean(self) -> float:
        return float(self.table.loc[self.table["same_block"] == 1, "path_count"].mean())

    @property
    def cross_block_mean(self) -> Optional[float]:
        cross = self.table.loc[self.table["same_block"] == 0, "path_count"]
        if len(cross) == 0:
            return None
        return float(cross.mean())

    def connection_ratios(self) -> pd.DataFrame:
        rows = []
        for case, mean in (("same_block", self.same_block_mean), ("cross_block", self.cross_block_mean)):
            if mean is None:
                continue
            rows.append(
                {"case": case, "mean_path_count": mean, "dense_count": self.dense_count,
                 "dense_to_dyad": self.dense_count / mean}
            )
        return pd.DataFrame(rows, columns=["case", "mean_path_count", "dense_count", "dense_to_dyad"])

    def to_csv(self, path: Optional[str] = None) -> Optional[str]:
        return self.table.to_csv(path, index=False, lineterminator="\n")

    def summary(self) -> None:
        print(self.connection_ratios().round(3))


def connectivity_pattern(n_dyad: int, n: int, variant: str = "it") -> np.ndarray:
    # overlapping positions of the two components count once
    config = DyadConfig(n_dyad=n_dyad, n_in=n, n_out=n, variant=variant, has_bias=False)
    ones = Tensor3.from_numpy(np.ones(config.weight_shape))
    w1, w2 = materialize_components(DyadLayer(config, ones, ones))
    return ((w1.values != 0) | (w2.values != 0)).astype(np.int64)


def count_paths(n_dyad: int, n: int, variant: str = "it") -> ConnectivityTable:
    if variant not in VARIANTS:
        raise ValueError(
            "Invalid variant '" + str(variant) + "', the available variants are: " + ", ".join(VARIANTS)
        )
    pattern = connectivity_pattern(n_dyad, n, variant)
    paths = pattern @ pattern

    size = n_dyad * n
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    i, j = i.ravel(), j.ravel()
    table = pd.DataFrame(
        {
            "i": i,
            "j": j,
            "same_block": (i // n == j // n).astype(np.int64),
            "path_count": paths[j, i],
            "dense_count": np.full(size * size, size, dtype=np.int64),
        },
        columns=CONNECTIVITY_COLUMNS,
    )
    return ConnectivityTable(table, n_dyad, n, variant)
