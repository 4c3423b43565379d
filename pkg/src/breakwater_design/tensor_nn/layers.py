"""Layers with paired forward/backward passes on ``(N, C, H, W)`` arrays."""

from __future__ import annotations

import numpy as np


class Layer:
    kind = "layer"
    params: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x: np.ndarray, skip: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray):
        """Return the input gradient (and the skip gradient for concat)."""
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called before forward")
        return self._cache

    def output_shape(self, shape: tuple, skip_shape: tuple | None = None) -> tuple:
        return shape


def im2col(x: np.ndarray, k: int, scratch: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """``(N, C, H, W) -> (N, C*k*k, H*W)`` patches with zero 'same' padding.

    ``scratch`` is an optional ``(padded, cols)`` buffer pair to fill instead
    of allocating; the padded buffer's border must be zero.
    """
    n, c, h, w = x.shape
    if k == 1:
        return x.reshape(n, c, h * w)
    p = k // 2
    if scratch is None:
        xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
        cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    else:
        xp, cols = scratch
    xp[:, :, p : p + h, p : p + w] = x
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy, dx] = xp[:, :, dy : dy + h, dx : dx + w]
    return cols.reshape(n, c * k * k, h * w)


def col2im(cols: np.ndarray, shape: tuple, k: int) -> np.ndarray:
    n, c, h, w = shape
    if k == 1:
        return cols.reshape(shape)
    p = k // 2
    cols = cols.reshape(n, c, k, k, h, w)
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            xp[:, :, dy : dy + h, dx : dx + w] += cols[:, :, dy, dx]
    return xp[:, :, p : p + h, p : p + w]


def neighbourhood(ys: np.ndarray, xs: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major ``k x k`` windows around cells.

    Returns ``(ny, nx)`` of shape ``(P, k*k)``; cells outside the grid are
    reported as they are and left to the caller to mask.
    """
    off = np.arange(k) - k // 2
    ny = np.repeat(ys[:, None] + off[None, :], k, axis=1)
    nx = np.tile(xs[:, None] + off[None, :], (1, k))
    return ny, nx


class Conv2D(Layer):
    """Stride-1 'same' convolution with optional ReLU."""

    kind = "conv"

    def __init__(self, in_ch: int, out_ch: int, k: int = 3, activation: str = "relu"):
        super().__init__()
        if k not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {k}")
        if activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_ch, self.out_ch, self.k, self.activation = in_ch, out_ch, k, activation
        self.params = {
            "W": np.zeros((out_ch, in_ch, k, k)),
            "b": np.zeros(out_ch),
        }

    def init(self, rng: np.random.Generator, dtype):
        fan_in = self.in_ch * self.k * self.k
        limit = np.sqrt(6.0 / fan_in)
        self.params["W"] = rng.uniform(-limit, limit, self.params["W"].shape).astype(dtype)
        self.params["b"] = np.zeros(self.out_ch, dtype=dtype)

    def output_shape(self, shape, skip_shape=None):
        c, h, w = shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} input channels, got {c}")
        return (self.out_ch, h, w)

    def forward(self, x, skip=None):
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} input channels, got {c}")
        cols = im2col(x, self.k)
        wmat = self.params["W"].reshape(self.out_ch, -1)
        out = np.matmul(wmat, cols)
        out += self.params["b"][:, None]
        out = out.reshape(n, self.out_ch, h, w)
        if self.activation == "relu":
            np.maximum(out, 0, out=out)
        self._cache = (x.shape, cols, out if self.activation == "relu" else None)
        return out

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without caching, reusing scratch buffers across calls."""
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} input channels, got {c}")
        scratch = None
        if self.k > 1:
            key = (x.shape, x.dtype)
            if getattr(self, "_scratch_key", None) != key:
                p = self.k // 2
                self._scratch = (
                    np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype),
                    np.empty((n, c, self.k, self.k, h, w), dtype=x.dtype),
                )
                self._scratch_key = key
            scratch = self._scratch
        out = np.matmul(self.params["W"].reshape(self.out_ch, -1), im2col(x, self.k, scratch))
        out += self.params["b"][:, None]
        if self.activation == "relu":
            np.maximum(out, 0, out=out)
        return out.reshape(n, self.out_ch, h, w)

    def forward_windows(self, windows: np.ndarray) -> np.ndarray:
        """Output ``(N, out, P)`` from ``(N, in, P, k*k)`` input windows, without caching.

        Each window lists the ``k x k`` neighbourhood of one output cell in
        row-major order, with zeros standing in for padding.
        """
        n, c, p, kk = windows.shape
        if c != self.in_ch or kk != self.k * self.k:
            raise ValueError(f"conv expects windows of shape (N, {self.in_ch}, P, {self.k * self.k}), got {windows.shape}")
        cols = windows.transpose(0, 1, 3, 2).reshape(n, c * kk, p)
        out = np.matmul(self.params["W"].reshape(self.out_ch, -1), cols) + self.params["b"][:, None]
        if self.activation == "relu":
            np.maximum(out, 0, out=out)
        return out

    def backward(self, dout):
        shape, cols, relu_out = self._need_cache()
        n, c, h, w = shape
        if relu_out is not None:
            dout = dout * (relu_out > 0)
        d = np.ascontiguousarray(dout).reshape(n, self.out_ch, h * w)
        self.grads["W"] = np.matmul(d, cols.transpose(0, 2, 1)).sum(axis=0).reshape(self.params["W"].shape)
        self.grads["b"] = d.sum(axis=(0, 2))
        wmat = self.params["W"].reshape(self.out_ch, -1)
        dcols = np.matmul(wmat.T, d)
        return col2im(dcols, shape, self.k)


class MaxPool2(Layer):
    kind = "maxpool2"

    def output_shape(self, shape, skip_shape=None):
        c, h, w = shape
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x, skip=None):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
        # the argmax is only needed for backward, so it is found there
        self._cache = x
        return np.maximum(np.maximum(x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2]), np.maximum(x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]))

    def backward(self, dout):
        x = self._need_cache()
        shape = x.shape
        n, c, h, w = shape
        idx = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4).argmax(axis=-1)
        blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
        np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
        return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


class Upsample2(Layer):
    """Nearest-neighbour 2x upsampling."""

    kind = "upsample2"

    def output_shape(self, shape, skip_shape=None):
        c, h, w = shape
        return (c, 2 * h, 2 * w)

    def forward(self, x, skip=None):
        self._cache = x.shape
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dout):
        n, c, h, w = self._need_cache()
        return dout.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


class SkipConcat(Layer):
    """Channel concatenation of the running tensor with an earlier output."""

    kind = "skip_concat"

    def output_shape(self, shape, skip_shape=None):
        if skip_shape is None:
            raise ValueError("skip_concat needs a source shape")
        if shape[1:] != skip_shape[1:]:
            raise ValueError(f"skip_concat spatial mismatch: {shape[1:]} vs {skip_shape[1:]}")
        return (shape[0] + skip_shape[0],) + shape[1:]

    def forward(self, x, skip=None):
        if skip is None or x.shape[2:] != skip.shape[2:]:
            raise ValueError("skip_concat spatial mismatch")
        self._cache = x.shape[1]
        return np.concatenate([x, skip], axis=1)

    def backward(self, dout):
        c = self._need_cache()
        return dout[:, :c], dout[:, c:]


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, shape, skip_shape=None):
        return (shape[0],)

    def forward(self, x, skip=None):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        n, c, h, w = self._need_cache()
        return np.broadcast_to(dout[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Dense(Layer):
    """Fully connected layer over the flattened input."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int, activation: str = "none"):
        super().__init__()
        if activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features, self.out_features, self.activation = in_features, out_features, activation
        self.params = {"W": np.zeros((out_features, in_features)), "b": np.zeros(out_features)}

    def init(self, rng, dtype):
        limit = np.sqrt(6.0 / self.in_features)
        self.params["W"] = rng.uniform(-limit, limit, self.params["W"].shape).astype(dtype)
        self.params["b"] = np.zeros(self.out_features, dtype=dtype)

    def output_shape(self, shape, skip_shape=None):
        size = int(np.prod(shape))
        if size != self.in_features:
            raise ValueError(f"dense expects {self.in_features} features, got {size}")
        return (self.out_features,)

    def forward(self, x, skip=None):
        flat = x.reshape(x.shape[0], -1)
        out = flat @ self.params["W"].T + self.params["b"]
        if self.activation == "relu":
            np.maximum(out, 0, out=out)
        self._cache = (x.shape, flat, out if self.activation == "relu" else None)
        return out

    def backward(self, dout):
        shape, flat, relu_out = self._need_cache()
        if relu_out is not None:
            dout = dout * (relu_out > 0)
        self.grads["W"] = dout.T @ flat
        self.grads["b"] = dout.sum(axis=0)
        return (dout @ self.params["W"]).reshape(shape)
