"""Dense rank-4 arrays in batch/channel/height/width layout.

Every value that flows between layers is a ``Tensor4``: a C-contiguous
float32 or float64 ndarray of shape (n, c, h, w). The flat ``data`` view
follows the row-major linear index ``((i*c + j)*h + y)*w + x``. Tensors
returned from operations are treated as immutable; ``set`` is for building
inputs that have not been shared yet.
"""

from __future__ import annotations

import numpy as np

# Checked construction bound: past this the flat element count is treated
# as an overflow rather than an allocation attempt.
MAX_ELEMENTS = 1 << 32

_DTYPES = {32: np.float32, 64: np.float64}


class ShapeError(ValueError):
    """Raised when tensor shapes or dimensions violate an operation's contract."""


def dtype_for(precision: int) -> np.dtype:
    if precision not in _DTYPES:
        raise ShapeError(f"precision must be 32 or 64, got {precision}")
    return np.dtype(_DTYPES[precision])


class Tensor4:
    __slots__ = ("array",)

    def __init__(self, array: np.ndarray, copy: bool = False):
        arr = np.array(array, copy=True) if copy else np.asarray(array)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor4 requires a rank-4 array, got rank {arr.ndim}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.array = arr

    @property
    def n(self) -> int:
        return self.array.shape[0]

    @property
    def c(self) -> int:
        return self.array.shape[1]

    @property
    def h(self) -> int:
        return self.array.shape[2]

    @property
    def w(self) -> int:
        return self.array.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.array.shape

    @property
    def precision(self) -> int:
        return 32 if self.array.dtype == np.float32 else 64

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view; index of (i,j,y,x) is ((i*c + j)*h + y)*w + x."""
        return self.array.reshape(-1)

    def _check_index(self, i: int, j: int, y: int, x: int) -> None:
        for name, v, bound in (("i", i, self.n), ("j", j, self.c), ("y", y, self.h), ("x", x, self.w)):
            if not 0 <= v < bound:
                raise IndexError(f"index {name}={v} out of range [0, {bound}) for shape {self.shape}")

    def get(self, i: int, j: int, y: int, x: int) -> float:
        self._check_index(i, j, y, x)
        return float(self.array[i, j, y, x])

    def set(self, i: int, j: int, y: int, x: int, value: float) -> None:
        self._check_index(i, j, y, x)
        self.array[i, j, y, x] = value

    def copy(self) -> "Tensor4":
        return Tensor4(self.array.copy())

    def __repr__(self) -> str:
        return f"Tensor4(shape={self.shape}, precision={self.precision})"


def make(n: int, c: int, h: int, w: int, fill: float = 0.0, precision: int = 64) -> Tensor4:
    dims = (n, c, h, w)
    if any(d < 1 for d in dims):
        raise ShapeError(f"zero dimension: all dims must be >= 1, got {dims}")
    count = n * c * h * w
    if count > MAX_ELEMENTS:
        raise ShapeError(f"element count overflow: {count} exceeds {MAX_ELEMENTS}")
    return Tensor4(np.full(dims, fill, dtype=dtype_for(precision)))


def _check_same_shape(a: Tensor4, b: Tensor4, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.precision != b.precision:
        raise ShapeError(f"{op}: precision mismatch {a.precision} vs {b.precision}")


def map2(a: Tensor4, b: Tensor4, op: str) -> Tensor4:
    """Elementwise add/sub/mul of identically shaped tensors."""
    _check_same_shape(a, b, f"map2({op})")
    if op == "add":
        return Tensor4(a.array + b.array)
    if op == "sub":
        return Tensor4(a.array - b.array)
    if op == "mul":
        return Tensor4(a.array * b.array)
    raise ValueError(f"map2: unknown op {op!r}, expected add/sub/mul")


def reduce(t: Tensor4, kind: str) -> float:
    if kind == "sum":
        return float(np.sum(t.array))
    if kind == "mean":
        return float(np.mean(t.array))
    raise ValueError(f"reduce: unknown kind {kind!r}, expected sum/mean")


def concat_channels(a: Tensor4, b: Tensor4) -> Tensor4:
    if (a.n, a.h, a.w) != (b.n, b.h, b.w):
        raise ShapeError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    if a.precision != b.precision:
        raise ShapeError(f"concat_channels: precision mismatch {a.precision} vs {b.precision}")
    return Tensor4(np.concatenate([a.array, b.array], axis=1))
