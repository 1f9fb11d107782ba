"""Dense float arrays and the handful of bulk operations the layers rely on.

Tensors are plain :class:`numpy.ndarray` objects in row-major, channel-last
layout (``h, w, c`` with the batch axis prepended at runtime).  The helpers
here add the shape checking that numpy's broadcasting would otherwise hide.
"""
from __future__ import annotations

import enum
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericError, ShapeError


class Precision(enum.Enum):
    STANDARD = "float32"
    VERIFY = "float64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)

    @classmethod
    def of(cls, value) -> "Precision":
        if isinstance(value, cls):
            return value
        dt = np.dtype(value)
        for p in cls:
            if p.dtype == dt:
                return p
        raise ValueError(f"unsupported precision {value!r}")


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise ShapeError(f"every dimension must be >= 1, got {dims}")
    return dims


def _finite(t: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise NumericError("operation produced non-finite values")
    return t


def tensor_new(shape: Sequence[int], fill: float = 0.0,
               precision: Precision | str = Precision.STANDARD) -> np.ndarray:
    return np.full(check_shape(shape), fill, dtype=Precision.of(precision).dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return _finite(a @ b)


def map_elementwise(t: np.ndarray, f: Callable[[float], float]) -> np.ndarray:
    if isinstance(f, np.ufunc):
        return _finite(f(t))
    return _finite(np.vectorize(f, otypes=[t.dtype])(t))


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b)
    return _finite(a + b)


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b)
    return _finite(a - b)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b)
    return _finite(a * b)


def _axis(t: np.ndarray, axis: Optional[int]) -> Optional[int]:
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    return axis


def reduce_sum(t: np.ndarray, axis: Optional[int] = None) -> np.ndarray:
    return _finite(np.sum(t, axis=_axis(t, axis)))


def reduce_max(t: np.ndarray, axis: Optional[int] = None) -> np.ndarray:
    return np.max(t, axis=_axis(t, axis))


def conv_output_size(size: int, window: int, stride: int = 1) -> int:
    if size < window:
        raise ShapeError(f"window {window} larger than input extent {size}")
    return (size - window) // stride + 1


def im2col(x: np.ndarray, window: Sequence[int], stride: int = 1) -> np.ndarray:
    """Unfold receptive fields into matrix rows (valid padding).

    ``x`` is ``[h, w, c]`` or batched ``[n, h, w, c]``.  Row ``r`` holds the
    field of output pixel ``r`` (row-major, batch outermost) flattened in
    ``(kh, kw, c)`` order, so the result has ``kh*kw*c`` columns.
    """
    kh, kw = (int(k) for k in window)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"im2col expects [h,w,c] or [n,h,w,c], got {x.shape}")
    n, h, w, c = x.shape
    oh = conv_output_size(h, kh, stride)
    ow = conv_output_size(w, kw, stride)
    cols = np.empty((n, oh, ow, kh * kw * c), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            k = (di * kw + dj) * c
            cols[..., k:k + c] = x[:, di:di + stride * (oh - 1) + 1:stride,
                                   dj:dj + stride * (ow - 1) + 1:stride, :]
    return cols.reshape(n * oh * ow, kh * kw * c)


def col2im(cols: np.ndarray, input_shape: Sequence[int], window: Sequence[int]) -> np.ndarray:
    """Adjoint of :func:`im2col` for stride 1: scatter-add rows back to ``[n,h,w,c]``."""
    n, h, w, c = input_shape
    kh, kw = window
    oh, ow = h - kh + 1, w - kw + 1
    fields = cols.reshape(n, oh, ow, kh, kw, c)
    out = np.zeros((n, h, w, c), dtype=cols.dtype)
    for di in range(kh):
        for dj in range(kw):
            out[:, di:di + oh, dj:dj + ow, :] += fields[:, :, :, di, dj, :]
    return out
