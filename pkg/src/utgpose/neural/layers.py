"""Layers with explicit forward/backward passes.

All tensors are numpy arrays with the batch on axis 0 and channels last:
Conv1D takes (N, L, C), Conv2D takes (N, H, W, C). Convolutions are valid
(no padding), stride 1, cross-correlation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

KINDS = ("Conv1D", "Conv2D", "InstanceNorm", "ReLU", "Dropout", "MaxPool", "Dense",
         "Sigmoid", "LSTM", "Flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_size: int | None = None
    n_filters: int | None = None
    rate: float | None = None
    units: int | None = None
    pool: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        required = {
            "Conv1D": ("kernel_size", "n_filters"),
            "Conv2D": ("kernel_size", "n_filters"),
            "Dropout": ("rate",),
            "Dense": ("units",),
            "LSTM": ("units",),
        }.get(self.kind, ())
        for name in required:
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind} requires {name}")
        if self.kernel_size is not None and self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.rate is not None and not 0 <= self.rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        if "pool" in d:
            d["pool"] = list(d["pool"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        if "pool" in d:
            d["pool"] = tuple(d["pool"])
        return cls(**d)


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind: ClassVar[str]

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.in_shape: tuple[int, ...] = ()
        self.out_shape: tuple[int, ...] = ()

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator, dtype) -> tuple[int, ...]:
        self.in_shape = tuple(in_shape)
        self.out_shape = self._build(self.in_shape, rng, np.dtype(dtype))
        self.zero_grad()
        return self.out_shape

    def _build(self, in_shape, rng, dtype):
        return in_shape

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> LayerSpec:
        return LayerSpec(kind=self.kind)

    def _check(self, x: np.ndarray) -> None:
        if x.shape[1:] != self.in_shape:
            raise ShapeError(f"{self.kind} expects (N, {self.in_shape}), got {x.shape}")


class Conv1D(Layer):
    kind = "Conv1D"

    def __init__(self, kernel_size: int, n_filters: int) -> None:
        super().__init__()
        self.kernel_size = kernel_size
        self.n_filters = n_filters

    def _build(self, in_shape, rng, dtype):
        if len(in_shape) != 2:
            raise ShapeError(f"Conv1D needs (length, channels), got {in_shape}")
        length, c_in = in_shape
        if length < self.kernel_size:
            raise ShapeError(f"Conv1D kernel {self.kernel_size} longer than input {length}")
        k = self.kernel_size
        self.params["W"] = he_uniform(rng, (k, c_in, self.n_filters), k * c_in, dtype)
        self.params["b"] = np.zeros(self.n_filters, dtype=dtype)
        return (length - k + 1, self.n_filters)

    def forward(self, x, training=False, rng=None):
        self._check(x)
        n, length, c_in = x.shape
        k, f = self.kernel_size, self.n_filters
        out_len = length - k + 1
        cols = sliding_window_view(x, k, axis=1)  # (N, out_len, C, k)
        cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(n * out_len, k * c_in)
        self._cols = cols
        y = cols @ self.params["W"].reshape(k * c_in, f) + self.params["b"]
        return y.reshape(n, out_len, f)

    def backward(self, dy):
        n, out_len, f = dy.shape
        k = self.kernel_size
        c_in = self.in_shape[1]
        d2 = dy.reshape(n * out_len, f)
        self.grads["W"] += (self._cols.T @ d2).reshape(k, c_in, f)
        self.grads["b"] += d2.sum(axis=0)
        dcols = (d2 @ self.params["W"].reshape(k * c_in, f).T).reshape(n, out_len, k, c_in)
        dx = np.zeros((n,) + self.in_shape, dtype=dy.dtype)
        for j in range(k):
            dx[:, j:j + out_len, :] += dcols[:, :, j, :]
        return dx

    def spec(self):
        return LayerSpec(kind=self.kind, kernel_size=self.kernel_size, n_filters=self.n_filters)


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, kernel_size: int, n_filters: int) -> None:
        super().__init__()
        self.kernel_size = kernel_size
        self.n_filters = n_filters

    def _build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ShapeError(f"Conv2D needs (height, width, channels), got {in_shape}")
        h, w, c_in = in_shape
        k = self.kernel_size
        if h < k or w < k:
            raise ShapeError(f"Conv2D kernel {k} larger than input {h}x{w}")
        self.params["W"] = he_uniform(rng, (k, k, c_in, self.n_filters), k * k * c_in, dtype)
        self.params["b"] = np.zeros(self.n_filters, dtype=dtype)
        return (h - k + 1, w - k + 1, self.n_filters)

    def forward(self, x, training=False, rng=None):
        self._check(x)
        n, h, w, c_in = x.shape
        k, f = self.kernel_size, self.n_filters
        ho, wo = h - k + 1, w - k + 1
        cols = sliding_window_view(x, (k, k), axis=(1, 2))  # (N, ho, wo, C, k, k)
        cols = np.ascontiguousarray(cols.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, k * k * c_in)
        self._cols = cols
        y = cols @ self.params["W"].reshape(k * k * c_in, f) + self.params["b"]
        return y.reshape(n, ho, wo, f)

    def backward(self, dy):
        n, ho, wo, f = dy.shape
        k = self.kernel_size
        c_in = self.in_shape[2]
        d2 = dy.reshape(n * ho * wo, f)
        self.grads["W"] += (self._cols.T @ d2).reshape(k, k, c_in, f)
        self.grads["b"] += d2.sum(axis=0)
        dcols = (d2 @ self.params["W"].reshape(k * k * c_in, f).T).reshape(n, ho, wo, k, k, c_in)
        dx = np.zeros((n,) + self.in_shape, dtype=dy.dtype)
        for di in range(k):
            for dj in range(k):
                dx[:, di:di + ho, dj:dj + wo, :] += dcols[:, :, :, di, dj, :]
        return dx

    def spec(self):
        return LayerSpec(kind=self.kind, kernel_size=self.kernel_size, n_filters=self.n_filters)


class InstanceNorm(Layer):
    """Per-sample, per-channel normalisation over all spatial axes.

    With a single spatial element there is no variance to normalise by, so
    the layer reduces to the affine map ``gamma * x + beta``.
    """

    kind = "InstanceNorm"

    def __init__(self, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps

    def _build(self, in_shape, rng, dtype):
        c = in_shape[-1]
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self._axes = tuple(range(1, len(in_shape)))
        self._size = int(np.prod(in_shape[:-1]))
        return in_shape

    def forward(self, x, training=False, rng=None):
        self._check(x)
        gamma, beta = self.params["gamma"], self.params["beta"]
        if self._size == 1:
            self._xhat = x
            return gamma * x + beta
        mean = x.mean(axis=self._axes, keepdims=True)
        var = x.var(axis=self._axes, keepdims=True)
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv_std
        return gamma * self._xhat + beta

    def backward(self, dy):
        sum_axes = (0,) + self._axes
        self.grads["gamma"] += (dy * self._xhat).sum(axis=sum_axes)
        self.grads["beta"] += dy.sum(axis=sum_axes)
        dxhat = dy * self.params["gamma"]
        if self._size == 1:
            return dxhat
        m = self._size
        s1 = dxhat.sum(axis=self._axes, keepdims=True)
        s2 = (dxhat * self._xhat).sum(axis=self._axes, keepdims=True)
        return self._inv_std / m * (m * dxhat - s1 - self._xhat * s2)


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, training=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return dy * self._mask


class Sigmoid(Layer):
    kind = "Sigmoid"

    def forward(self, x, training=False, rng=None):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1 - self._y)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-rate) during training."""

    kind = "Dropout"

    def __init__(self, rate: float) -> None:
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError("rate must be in [0, 1)")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / x.dtype.type(1 - self.rate)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask

    def spec(self):
        return LayerSpec(kind=self.kind, rate=self.rate)


class MaxPool(Layer):
    """Non-overlapping max pooling over the spatial axes.

    ``pool`` gives the window per spatial axis. An axis shorter than its
    window is left unpooled; trailing elements that do not fill a window are
    dropped (floor mode).
    """

    kind = "MaxPool"

    def __init__(self, pool: int | tuple[int, ...] = 2) -> None:
        super().__init__()
        self.pool_arg = pool

    def _build(self, in_shape, rng, dtype):
        spatial = in_shape[:-1]
        pool = self.pool_arg if isinstance(self.pool_arg, tuple) else (self.pool_arg,) * len(spatial)
        if len(pool) != len(spatial):
            raise ShapeError(f"pool {pool} does not match spatial shape {spatial}")
        self.pool = tuple(p if s >= p else 1 for p, s in zip(pool, spatial))
        out = tuple(s // p for s, p in zip(spatial, self.pool))
        return out + (in_shape[-1],)

    def _blocks(self, x):
        n = x.shape[0]
        c = x.shape[-1]
        out = self.out_shape[:-1]
        crop = tuple(slice(0, o * p) for o, p in zip(out, self.pool))
        xc = x[(slice(None),) + crop]
        inter = [n]
        for o, p in zip(out, self.pool):
            inter += [o, p]
        inter.append(c)
        xr = xc.reshape(inter)
        d = len(out)
        # -> (N, o1..od, C, p1..pd)
        perm = [0] + [1 + 2 * i for i in range(d)] + [1 + 2 * d] + [2 + 2 * i for i in range(d)]
        xt = xr.transpose(perm)
        return xt.reshape(xt.shape[:d + 2] + (-1,)), inter, perm

    def forward(self, x, training=False, rng=None):
        self._check(x)
        blocks, self._inter, self._perm = self._blocks(x)
        self._arg = blocks.argmax(axis=-1)
        return np.take_along_axis(blocks, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        p_total = int(np.prod(self.pool))
        onehot = np.zeros(dy.shape + (p_total,), dtype=dy.dtype)
        np.put_along_axis(onehot, self._arg[..., None], dy[..., None], axis=-1)
        d = len(self.pool)
        xt_shape = [self._inter[i] for i in self._perm]
        xr = onehot.reshape(xt_shape).transpose(np.argsort(self._perm))
        n = dy.shape[0]
        cropped = xr.reshape((n,) + tuple(o * p for o, p in zip(self.out_shape[:-1], self.pool))
                             + (self.in_shape[-1],))
        dx = np.zeros((n,) + self.in_shape, dtype=dy.dtype)
        dx[(slice(None),) + tuple(slice(0, s) for s in cropped.shape[1:1 + d])] = cropped
        return dx

    def spec(self):
        pool = self.pool_arg if isinstance(self.pool_arg, tuple) else (self.pool_arg,)
        return LayerSpec(kind=self.kind, kernel_size=max(pool), pool=tuple(pool))


class Flatten(Layer):
    kind = "Flatten"

    def _build(self, in_shape, rng, dtype):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False, rng=None):
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape((dy.shape[0],) + self.in_shape)


class Dense(Layer):
    kind = "Dense"

    def __init__(self, units: int) -> None:
        super().__init__()
        self.units = units

    def _build(self, in_shape, rng, dtype):
        if len(in_shape) != 1:
            raise ShapeError(f"Dense needs a flat input, got {in_shape}")
        self.params["W"] = he_uniform(rng, (in_shape[0], self.units), in_shape[0], dtype)
        self.params["b"] = np.zeros(self.units, dtype=dtype)
        return (self.units,)

    def forward(self, x, training=False, rng=None):
        self._check(x)
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads["W"] += self._x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"].T

    def spec(self):
        return LayerSpec(kind=self.kind, units=self.units)


def lstm_step(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              weights: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM cell update. Gate blocks in ``W_x``, ``W_h``, ``b`` are ordered i, f, g, o."""
    h, c, _ = _lstm_step(x, h_prev, c_prev, weights)
    return h, c


def _lstm_step(x, h_prev, c_prev, weights):
    u = h_prev.shape[-1]
    z = x @ weights["W_x"] + h_prev @ weights["W_h"] + weights["b"]
    i = sigmoid(z[..., :u])
    f = sigmoid(z[..., u:2 * u])
    g = np.tanh(z[..., 2 * u:3 * u])
    o = sigmoid(z[..., 3 * u:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, g, o, tc)


class LSTM(Layer):
    """Runs over axis 1 of the input and returns the final hidden state.

    Any axes after the time axis are flattened into the feature vector, so a
    (T, 1, C) feature map from a Conv2D stack feeds in directly.
    """

    kind = "LSTM"

    def __init__(self, units: int) -> None:
        super().__init__()
        self.units = units

    def _build(self, in_shape, rng, dtype):
        if len(in_shape) < 2:
            raise ShapeError(f"LSTM needs (time, features...), got {in_shape}")
        feat = int(np.prod(in_shape[1:]))
        u = self.units
        self.params["W_x"] = he_uniform(rng, (feat, 4 * u), feat, dtype)
        self.params["W_h"] = he_uniform(rng, (u, 4 * u), u, dtype)
        b = np.zeros(4 * u, dtype=dtype)
        b[u:2 * u] = 1.0  # forget-gate bias
        self.params["b"] = b
        return (u,)

    def forward(self, x, training=False, rng=None):
        self._check(x)
        n, t_len = x.shape[:2]
        xs = x.reshape(n, t_len, -1)
        h = np.zeros((n, self.units), dtype=x.dtype)
        c = np.zeros_like(h)
        self._caches = []
        for t in range(t_len):
            h, c, cache = _lstm_step(xs[:, t], h, c, self.params)
            self._caches.append(cache)
        return h

    def backward(self, dy):
        u = self.units
        n = dy.shape[0]
        t_len = len(self._caches)
        dxs = np.zeros((n, t_len, self.params["W_x"].shape[0]), dtype=dy.dtype)
        dh = dy
        dc = np.zeros_like(dy)
        for t in reversed(range(t_len)):
            x, h_prev, c_prev, i, f, g, o, tc = self._caches[t]
            do = dh * tc
            dc = dc + dh * o * (1 - tc**2)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2),
                                 do * o * (1 - o)], axis=-1)
            self.grads["W_x"] += x.T @ dz
            self.grads["W_h"] += h_prev.T @ dz
            self.grads["b"] += dz.sum(axis=0)
            dxs[:, t] = dz @ self.params["W_x"].T
            dh = dz @ self.params["W_h"].T
            dc = dc * f
        return dxs.reshape((n,) + self.in_shape)

    def spec(self):
        return LayerSpec(kind=self.kind, units=self.units)


def layer_from_spec(spec: LayerSpec) -> Layer:
    if spec.kind == "Conv1D":
        return Conv1D(spec.kernel_size, spec.n_filters)
    if spec.kind == "Conv2D":
        return Conv2D(spec.kernel_size, spec.n_filters)
    if spec.kind == "Dropout":
        return Dropout(spec.rate)
    if spec.kind == "MaxPool":
        pool = spec.pool if spec.pool is not None else spec.kernel_size or 2
        return MaxPool(pool if not isinstance(pool, tuple) or len(pool) > 1 else pool[0])
    if spec.kind == "Dense":
        return Dense(spec.units)
    if spec.kind == "LSTM":
        return LSTM(spec.units)
    return {"InstanceNorm": InstanceNorm, "ReLU": ReLU, "Sigmoid": Sigmoid,
            "Flatten": Flatten}[spec.kind]()
