"""Differentiable layers with hand-written forward and backward passes.

Every layer works on batched, channel-last arrays.  ``build`` fixes the
per-sample input shape and creates parameters; ``forward`` caches whatever
``backward`` needs; ``backward`` returns the input gradient and *adds* the
parameter gradients into ``grads`` (call :meth:`Layer.zero_grad` between
steps).
"""
from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .tensor import col2im, conv_output_size, im2col

Shape = Tuple[int, ...]


def glorot_uniform(rng: np.random.Generator, shape: Shape, fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind: str = "layer"
    # label used for Keras-style summary names, e.g. "conv2d" -> conv2d_1 (Conv2D)
    label: Tuple[str, str] = ("layer", "Layer")

    def __init__(self) -> None:
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.input_shape: Optional[Shape] = None
        self.output_shape: Optional[Shape] = None
        self.name: Optional[str] = None
        self._cache = None

    def build(self, input_shape: Shape, rng: Optional[np.random.Generator] = None,
              dtype=np.float32) -> Shape:
        self.input_shape = tuple(input_shape)
        self.output_shape = self.compute_output_shape(self.input_shape)
        return self.output_shape

    def compute_output_shape(self, input_shape: Shape) -> Shape:
        return input_shape

    def hyper(self) -> dict:
        return {}

    def decisions(self):
        """Discrete choices of the last forward pass (ReLU masks, pool argmaxes)."""
        return None

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def astype(self, dtype) -> None:
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        self.zero_grad()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache

    def _accumulate(self, name: str, g: np.ndarray) -> None:
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g.copy()

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.hyper().items())
        return f"{type(self).__name__}({args})"


class Rescale(Layer):
    """Multiply by a constant; the classifier divides pixel values by 255."""

    kind = "rescale"
    label = ("lambda", "Lambda")

    def __init__(self, scale: float = 1.0 / 255.0) -> None:
        super().__init__()
        self.scale = float(scale)

    def hyper(self) -> dict:
        return {"scale": self.scale}

    def forward(self, x, training=False):
        self._cache = True
        return x * x.dtype.type(self.scale)

    def backward(self, g):
        self._cached()
        return g * g.dtype.type(self.scale)


class Conv2D(Layer):
    """3x3 (by default) valid-padding, stride-1 convolution via im2col.

    Weights are stored as ``W[kh, kw, c_in, c_out]`` with bias ``b[c_out]``.
    """

    kind = "conv2d"
    label = ("conv2d", "Conv2D")

    def __init__(self, filters: int, kernel_size: int = 3) -> None:
        super().__init__()
        if filters < 1 or kernel_size < 1:
            raise ConfigError("filters and kernel_size must be positive")
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)

    def hyper(self) -> dict:
        return {"filters": self.filters, "kernel_size": self.kernel_size}

    def compute_output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"conv2d expects [h,w,c] input, got {input_shape}")
        h, w, _ = input_shape
        k = self.kernel_size
        return (conv_output_size(h, k), conv_output_size(w, k), self.filters)

    def build(self, input_shape, rng=None, dtype=np.float32):
        out = super().build(input_shape, rng, dtype)
        k, c_in = self.kernel_size, input_shape[2]
        rng = rng if rng is not None else np.random.default_rng()
        self.params["W"] = glorot_uniform(rng, (k, k, c_in, self.filters),
                                          k * k * c_in, k * k * self.filters, dtype)
        self.params["b"] = np.zeros(self.filters, dtype=dtype)
        self.zero_grad()
        return out

    def forward(self, x, training=False):
        W = self.params["W"]
        k, _, c_in, c_out = W.shape
        if x.ndim != 4 or x.shape[3] != c_in:
            raise ShapeError(f"conv2d expects [n,h,w,{c_in}], got {x.shape}")
        n, h, w, _ = x.shape
        oh, ow = conv_output_size(h, k), conv_output_size(w, k)
        cols = im2col(x, (k, k))
        y = cols @ W.reshape(-1, c_out) + self.params["b"]
        self._cache = (cols, x.shape)
        return y.reshape(n, oh, ow, c_out)

    def backward(self, g):
        cols, in_shape = self._cached()
        W = self.params["W"]
        k, _, c_in, c_out = W.shape
        gf = g.reshape(-1, c_out)
        if gf.shape[0] != cols.shape[0]:
            raise ShapeError(f"upstream gradient {g.shape} does not match forward output")
        self._accumulate("W", (cols.T @ gf).reshape(W.shape))
        self._accumulate("b", gf.sum(axis=0))
        dcols = gf @ W.reshape(-1, c_out).T
        return col2im(dcols, in_shape, (k, k))


class ReLU(Layer):
    kind = "relu"
    label = ("activation", "Activation")

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, x.dtype.type(0))

    def backward(self, g):
        mask = self._cached()
        return np.where(mask, g, g.dtype.type(0))

    def decisions(self):
        return self._cache


class MaxPool2D(Layer):
    """Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped.

    Ties resolve to the first maximum in row-major window order.
    """

    kind = "maxpool2d"
    label = ("max_pooling2d", "MaxPooling2D")

    def __init__(self, pool_size: int = 2) -> None:
        super().__init__()
        self.pool_size = int(pool_size)

    def hyper(self) -> dict:
        return {"pool_size": self.pool_size}

    def compute_output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"maxpool expects [h,w,c] input, got {input_shape}")
        h, w, c = input_shape
        p = self.pool_size
        if h < p or w < p:
            raise ShapeError(f"maxpool {p}x{p} needs input at least {p}x{p}, got {h}x{w}")
        return (h // p, w // p, c)

    def _corners(self, a: np.ndarray):
        """The p*p strided views making up each window, in row-major order."""
        p = self.pool_size
        oh, ow = a.shape[1] // p, a.shape[2] // p
        return [a[:, di:oh * p:p, dj:ow * p:p, :] for di in range(p) for dj in range(p)]

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ShapeError(f"maxpool expects [n,h,w,c], got {x.shape}")
        self.compute_output_shape(x.shape[1:])
        corners = self._corners(x)
        best = corners[0].copy()
        for cand in corners[1:]:
            np.maximum(best, cand, out=best)
        # walk backwards so the first maximum in window order wins ties
        idx = np.empty(best.shape, dtype=np.int8)
        for k in range(len(corners) - 1, -1, -1):
            np.copyto(idx, k, where=corners[k] == best)
        self._cache = (idx, x.shape)
        return best

    def backward(self, g):
        idx, in_shape = self._cached()
        if g.shape != idx.shape:
            raise ShapeError(f"upstream gradient {g.shape} does not match {idx.shape}")
        dx = np.zeros(in_shape, dtype=g.dtype)
        zero = g.dtype.type(0)
        for k, view in enumerate(self._corners(dx)):
            view[...] = np.where(idx == k, g, zero)
        return dx

    def decisions(self):
        return None if self._cache is None else self._cache[0]


class Flatten(Layer):
    kind = "flatten"
    label = ("flatten", "Flatten")

    def compute_output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._cached())


class Dense(Layer):
    """Fully connected layer ``y = x @ W + b`` with ``W[in, out]``."""

    kind = "dense"
    label = ("dense", "Dense")

    def __init__(self, units: int) -> None:
        super().__init__()
        if units < 1:
            raise ConfigError("units must be positive")
        self.units = int(units)

    def hyper(self) -> dict:
        return {"units": self.units}

    def compute_output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {input_shape}")
        return (self.units,)

    def build(self, input_shape, rng=None, dtype=np.float32):
        out = super().build(input_shape, rng, dtype)
        rng = rng if rng is not None else np.random.default_rng()
        n_in = input_shape[0]
        self.params["W"] = glorot_uniform(rng, (n_in, self.units), n_in, self.units, dtype)
        self.params["b"] = np.zeros(self.units, dtype=dtype)
        self.zero_grad()
        return out

    def forward(self, x, training=False):
        W = self.params["W"]
        if x.ndim != 2 or x.shape[1] != W.shape[0]:
            raise ShapeError(f"dense expects [n,{W.shape[0]}], got {x.shape}")
        self._cache = x
        return x @ W + self.params["b"]

    def backward(self, g):
        x = self._cached()
        self._accumulate("W", x.T @ g)
        self._accumulate("b", g.sum(axis=0))
        return g @ self.params["W"].T


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` while training,
    inference is the identity."""

    kind = "dropout"
    label = ("dropout", "Dropout")

    def __init__(self, rate: float = 0.5, rng: Optional[np.random.Generator] = None) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.rng = rng if rng is not None else np.random.default_rng()
        self._identity: Optional[bool] = None

    def hyper(self) -> dict:
        return {"rate": self.rate}

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = None
            self._identity = True
            return x
        keep = self.rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - self.rate))
        self._cache = mask
        self._identity = False
        return x * mask

    def backward(self, g):
        if self._identity is None:
            raise StateError("dropout: backward called before forward")
        if self._identity:
            return g
        return g * self._cache


class Sigmoid(Layer):
    kind = "sigmoid"
    label = ("activation", "Activation")

    def forward(self, x, training=False):
        # exp of -|x| never overflows
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
        info = np.finfo(x.dtype)
        # keep outputs strictly inside (0, 1) when exp saturates
        y = np.clip(y, info.tiny, 1.0 - info.epsneg)
        self._cache = y
        return y

    def backward(self, g):
        y = self._cached()
        return g * y * (1 - y)


LAYER_TYPES = {cls.kind: cls for cls in
               (Rescale, Conv2D, ReLU, MaxPool2D, Flatten, Dense, Dropout, Sigmoid)}


def layer_from_config(kind: str, hyper: dict) -> Layer:
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ConfigError(f"unknown layer kind {kind!r}") from None
    return cls(**hyper)
