from __future__ import annotations

import contextlib
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DimensionMismatchError, PrecisionMismatchError, ShapeMismatchError

PRECISIONS: Dict[str, type] = {"f32": np.float32, "f64": np.float64}
ACCUMULATIONS: Tuple[str, ...] = ("ordered", "blas")

Shape3 = Tuple[int, int, int]
ArrayLike = Union["Matrix", "Tensor3", np.ndarray]

_accumulation: str = "ordered"
_flop_counters: List[FlopCounter] = []


def get_dtype(precision: str) -> np.dtype:
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ValueError(
            "Invalid precision '" + str(precision) + "', the available precisions are: "
            + ", ".join(PRECISIONS.keys())
        ) from None


def precision_of(dtype: np.dtype) -> str:
    for name, scalar_type in PRECISIONS.items():
        if np.dtype(dtype) == np.dtype(scalar_type):
            return name
    raise ValueError("Unsupported scalar type " + str(dtype) + ", use float32 or float64")


def set_accumulation(mode: str) -> None:
    """
    Select how matmul and bmm sum over the inner axis, library wide.
    "ordered" sums terms one at a time in ascending K order, which makes every product reproducible
    bit for bit against a naive triple loop. "blas" hands the product to numpy.matmul and is the
    throughput path used for timing and training.
    """
    global _accumulation
    if mode not in ACCUMULATIONS:
        raise ValueError(
            "Invalid accumulation mode '" + str(mode) + "', the available modes are: "
            + ", ".join(ACCUMULATIONS)
        )
    _accumulation = mode


def get_accumulation() -> str:
    return _accumulation


@contextlib.contextmanager
def accumulation(mode: str) -> Iterator[None]:
    previous = _accumulation
    set_accumulation(mode)
    try:
        yield
    finally:
        set_accumulation(previous)


class FlopCounter:
    """
    Counts the floating point operations of every matmul and bmm executed while the counter is
    active. A product of (M, K) by (K, N) counts 2*M*N*K, batched products multiply by B.
    """

    def __init__(self):
        self.flops: int = 0
        self.calls: int = 0

    def __enter__(self) -> FlopCounter:
        _flop_counters.append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _flop_counters.remove(self)

    def add(self, flops: int) -> None:
        self.flops += flops
        self.calls += 1


def _count_flops(flops: int) -> None:
    for counter in _flop_counters:
        counter.add(flops)


class Matrix:
    def __init__(self, data, precision: Optional[str] = None):
        array = np.asarray(data)
        if precision is None:
            dtype = array.dtype if array.dtype in (np.float32, np.float64) else np.dtype(np.float64)
        else:
            dtype = get_dtype(precision)
        array = np.array(array, dtype=dtype, order="C", copy=True)
        if array.ndim != 2:
            raise ShapeMismatchError("A Matrix needs 2 axes, got " + str(array.ndim))
        self._set_values(array)

    def _set_values(self, array: np.ndarray) -> None:
        if array.shape[0] < 1 or array.shape[1] < 1:
            raise ShapeMismatchError("A Matrix needs at least one row and one column, got " + str(array.shape))
        array.flags.writeable = False
        self._values: np.ndarray = array
        self.rows: int = array.shape[0]
        self.cols: int = array.shape[1]
        self.precision: str = precision_of(array.dtype)

    @classmethod
    def _wrap(cls, array: np.ndarray) -> Matrix:
        matrix = cls.__new__(cls)
        matrix._set_values(array)
        return matrix

    @classmethod
    def zeros(cls, rows: int, cols: int, precision: str = "f64") -> Matrix:
        return cls._wrap(np.zeros((rows, cols), dtype=get_dtype(precision)))

    @classmethod
    def identity(cls, size: int, precision: str = "f64") -> Matrix:
        return cls._wrap(np.eye(size, dtype=get_dtype(precision)))

    @classmethod
    def random(
        cls, rows: int, cols: int, seed: int = 0, precision: str = "f64", low: float = -1.0, high: float = 1.0
    ) -> Matrix:
        rng = np.random.default_rng(seed)
        return cls._wrap(rng.uniform(low, high, size=(rows, cols)).astype(get_dtype(precision)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def dtype(self) -> np.dtype:
        return self._values.dtype

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def data(self) -> np.ndarray:
        # Flat row-major buffer, shared with the matrix.
        return self._values.reshape(-1)

    def __repr__(self) -> str:
        return f"Matrix(rows={self.rows}, cols={self.cols}, precision={self.precision})"


class Tensor3:
    """
    A 3-axis view on a flat scalar buffer. Element (i, j, k) lives at
    offset + i*s0 + j*s1 + k*s2 of the buffer. Views never own or modify the buffer: reshaping,
    transposing and narrowing only produce new metadata, materialize() is the one explicit copy.
    """

    def __init__(self, buffer: np.ndarray, shape: Sequence[int], strides: Sequence[int], offset: int = 0):
        if buffer.ndim != 1:
            raise ShapeMismatchError("A Tensor3 buffer must be flat")
        shape = tuple(int(d) for d in shape)
        strides = tuple(int(s) for s in strides)
        if len(shape) != 3 or len(strides) != 3:
            raise ShapeMismatchError("A Tensor3 needs exactly 3 axes, got shape " + str(shape))
        if min(shape) < 1:
            raise ShapeMismatchError("Every Tensor3 axis needs at least one element, got " + str(shape))
        if min(strides) < 0 or offset < 0:
            raise ShapeMismatchError("Negative strides or offsets are not supported")
        last = offset + sum((d - 1) * s for d, s in zip(shape, strides))
        if last >= buffer.shape[0]:
            raise ShapeMismatchError(
                f"Shape {shape} with strides {strides} reaches offset {last} past a buffer of {buffer.shape[0]}"
            )
        self.buffer: np.ndarray = buffer
        self.shape: Shape3 = shape
        self.strides: Shape3 = strides
        self.offset: int = offset
        self.precision: str = precision_of(buffer.dtype)

    @classmethod
    def from_numpy(cls, array, precision: Optional[str] = None) -> Tensor3:
        array = np.asarray(array)
        dtype = get_dtype(precision) if precision is not None else array.dtype
        return cls._own(np.array(array, dtype=dtype, order="C", copy=True))

    @classmethod
    def _own(cls, array: np.ndarray) -> Tensor3:
        if array.ndim != 3:
            raise ShapeMismatchError("A Tensor3 needs exactly 3 axes, got " + str(array.ndim))
        array = np.ascontiguousarray(array)
        array.flags.writeable = False
        d0, d1, d2 = array.shape
        return cls(array.reshape(-1), (d0, d1, d2), (d1 * d2, d2, 1))

    @property
    def dtype(self) -> np.dtype:
        return self.buffer.dtype

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1] * self.shape[2]

    @property
    def is_contiguous(self) -> bool:
        d0, d1, d2 = self.shape
        return self.strides == (d1 * d2, d2, 1)

    @property
    def values(self) -> np.ndarray:
        itemsize = self.buffer.itemsize
        return np.lib.stride_tricks.as_strided(
            self.buffer[self.offset:],
            shape=self.shape,
            strides=tuple(s * itemsize for s in self.strides),
            writeable=False,
        )

    def __getitem__(self, index: Tuple[int, int, int]) -> float:
        for axis, (position, dim) in enumerate(zip(index, self.shape)):
            if not 0 <= position < dim:
                raise IndexError(f"Index {position} out of range for axis {axis} of size {dim}")
        i, j, k = index
        s0, s1, s2 = self.strides
        return self.buffer[self.offset + i * s0 + j * s1 + k * s2]

    def materialize(self) -> Tensor3:
        return Tensor3._own(np.array(self.values, order="C", copy=True))

    def shares_buffer(self, other: Union[Tensor3, Matrix]) -> bool:
        other_buffer = other.buffer if isinstance(other, Tensor3) else other.values
        return bool(np.shares_memory(self.buffer, other_buffer))

    def __repr__(self) -> str:
        return f"Tensor3(shape={self.shape}, strides={self.strides}, precision={self.precision})"


def reshape3(m: Matrix, d0: int, d1: int, d2: int) -> Tensor3:
    if d0 * d1 * d2 != m.rows * m.cols:
        raise ShapeMismatchError(
            f"Cannot view a {m.rows}x{m.cols} matrix as ({d0}, {d1}, {d2}): "
            f"{d0 * d1 * d2} elements against {m.rows * m.cols}"
        )
    return Tensor3(m.data, (d0, d1, d2), (d1 * d2, d2, 1))


def reshape2(t: Tensor3, rows: int, cols: int) -> Matrix:
    if rows * cols != t.size:
        raise ShapeMismatchError(f"Cannot view a {t.shape} tensor as {rows}x{cols}")
    if not t.is_contiguous:
        raise ShapeMismatchError("Only a contiguous Tensor3 can be viewed as a Matrix, materialize() it first")
    return Matrix._wrap(t.values.reshape(rows, cols))


def transpose01(t: Tensor3) -> Tensor3:
    d0, d1, d2 = t.shape
    s0, s1, s2 = t.strides
    return Tensor3(t.buffer, (d1, d0, d2), (s1, s0, s2), t.offset)


def transpose12(t: Tensor3) -> Tensor3:
    d0, d1, d2 = t.shape
    s0, s1, s2 = t.strides
    return Tensor3(t.buffer, (d0, d2, d1), (s0, s2, s1), t.offset)


def narrow0(t: Tensor3, start: int, stop: int) -> Tensor3:
    if not 0 <= start < stop <= t.shape[0]:
        raise ShapeMismatchError(f"Invalid range [{start}, {stop}) for a leading axis of {t.shape[0]}")
    return Tensor3(t.buffer, (stop - start, t.shape[1], t.shape[2]), t.strides, t.offset + start * t.strides[0])


def concatenate0(tensors: Sequence[Tensor3]) -> Tensor3:
    first = tensors[0]
    for other in tensors[1:]:
        _check_precision(first, other)
        if other.shape[1:] != first.shape[1:]:
            raise DimensionMismatchError(
                f"Cannot concatenate {first.shape} with {other.shape} along axis 0", axis="trailing"
            )
    return Tensor3._own(np.concatenate([t.values for t in tensors], axis=0))


def _check_precision(a, b) -> None:
    if a.precision != b.precision:
        raise PrecisionMismatchError(f"Operands mix precisions {a.precision} and {b.precision}")


def _ordered_product(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros(a.shape[:-1] + x.shape[-1:], dtype=a.dtype)
    term = np.empty_like(out)
    for k in range(a.shape[-1]):
        np.multiply(a[..., :, k:k + 1], x[..., k:k + 1, :], out=term)
        out += term
    return out


def _product(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    if _accumulation == "blas":
        return np.matmul(a, x)
    return _ordered_product(a, x)


def bmm(a: Tensor3, x: Tensor3) -> Tensor3:
    _check_precision(a, x)
    batch, rows, inner = a.shape
    x_batch, x_inner, cols = x.shape
    if batch != x_batch:
        raise DimensionMismatchError(f"bmm batch axis mismatch: {batch} against {x_batch}", axis="batch")
    if inner != x_inner:
        raise DimensionMismatchError(f"bmm inner axis mismatch: {inner} against {x_inner}", axis="inner")
    _count_flops(2 * batch * rows * cols * inner)
    return Tensor3._own(_product(a.values, x.values))


def matmul(a: Matrix, x: Matrix) -> Matrix:
    _check_precision(a, x)
    if a.cols != x.rows:
        raise DimensionMismatchError(
            f"matmul inner axis mismatch: {a.rows}x{a.cols} times {x.rows}x{x.cols}", axis="inner"
        )
    _count_flops(2 * a.rows * x.cols * a.cols)
    return Matrix._wrap(_product(a.values, x.values))


def add(a: Matrix, b: Matrix) -> Matrix:
    _check_precision(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Cannot add {a.shape} and {b.shape}")
    return Matrix._wrap(a.values + b.values)


def add_bias(y: Matrix, bias: Optional[Matrix]) -> Matrix:
    if bias is None:
        return y
    _check_precision(y, bias)
    if bias.shape != (y.rows, 1):
        raise DimensionMismatchError(f"Bias of shape {bias.shape} does not fit {y.rows} output rows", axis="rows")
    return Matrix._wrap(y.values + bias.values)


def transpose(m: Matrix) -> Matrix:
    # materializing copy, a Matrix is always row-major
    return Matrix._wrap(np.ascontiguousarray(m.values.T))


def flop_count_dense(f_out: int, f_in: int, n_batch: int) -> int:
    _check_counts(f_out=f_out, f_in=f_in, n_batch=n_batch)
    return 2 * f_out * f_in * n_batch


def flop_count_dyad(n_dyad: int, n_out: int, n_in: int, n_batch: int) -> int:
    _check_counts(n_dyad=n_dyad, n_out=n_out, n_in=n_in, n_batch=n_batch)
    # two components, each one batched product over n_dyad blocks
    return 2 * (2 * n_dyad * n_out * n_in * n_batch)


def _check_counts(**counts: int) -> None:
    for name, value in counts.items():
        if value < 1:
            raise ValueError(f"{name} must be at least 1, got {value}")


def as_array(value: ArrayLike) -> np.ndarray:
    if isinstance(value, (Matrix, Tensor3)):
        return value.values
    return np.asarray(value)


def max_relative_error(actual: ArrayLike, expected: ArrayLike) -> float:
    actual_values = as_array(actual).astype(np.float64)
    expected_values = as_array(expected).astype(np.float64)
    if actual_values.shape != expected_values.shape:
        raise ShapeMismatchError(f"Cannot compare {actual_values.shape} with {expected_values.shape}")
    scale = max(float(np.max(np.abs(expected_values))), np.finfo(np.float64).tiny)
    return float(np.max(np.abs(actual_values - expected_values))) / scale
