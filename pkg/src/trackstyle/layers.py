"""Neural-network primitives with exact analytic backward passes.

Everything is plain numpy in NHWC layout. Convolutions run as matrix
multiplies over im2col matrices; the column matrix built in the forward pass
is kept until backward so the weight gradient is a single GEMM. Layers cache
only in train mode and release their caches after backward.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    """Minimal interface: forward/backward plus named parameter access."""

    name: str

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def state(self) -> dict[str, np.ndarray]:
        """Non-trained arrays that still belong in a checkpoint."""
        return {}


def _correlate(x: np.ndarray, w_mat: np.ndarray, kh: int, kw: int,
               ph: int, pw: int, out_ch: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 cross-correlation via im2col; returns (output, column matrix).

    `w_mat` must be ordered (in_ch, kh, kw) x out_ch to match the natural
    layout of numpy's sliding windows, which keeps the im2col reshape cheap.
    """
    n, h, w, _ = x.shape
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (n, ho, wo, c, kh, kw)
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    cols = win.reshape(n * ho * wo, -1)  # the one unavoidable copy
    out = (cols @ w_mat).reshape(n, ho, wo, out_ch)
    return out, cols


class Conv2D(Layer):
    """Stride-1 2-D convolution with per-side (pad_h, pad_w) zero padding."""

    def __init__(self, name: str, in_ch: int, out_ch: int, kernel: tuple[int, int],
                 pad: tuple[int, int], rng: np.random.Generator, dtype=np.float32):
        self.name = name
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kh, self.kw = kernel
        self.ph, self.pw = pad
        fan_in = self.kh * self.kw * in_ch
        limit = np.sqrt(6.0 / fan_in)
        self.w = rng.uniform(-limit, limit, size=(self.kh, self.kw, in_ch, out_ch)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cols: np.ndarray | None = None
        self._in_shape: tuple[int, ...] | None = None

    def _w_mat(self) -> np.ndarray:
        return self.w.transpose(2, 0, 1, 3).reshape(-1, self.out_ch)

    def forward(self, x, train):
        out, cols = _correlate(x, self._w_mat(), self.kh, self.kw, self.ph, self.pw, self.out_ch)
        if train:
            self._cols = cols
            self._in_shape = x.shape
        return out + self.b

    def backward(self, dout):
        assert self._cols is not None, "backward before forward"
        n, ho, wo, _ = dout.shape
        _, h, w, _ = self._in_shape
        dflat = dout.reshape(-1, self.out_ch)
        dw_mat = self._cols.T @ dflat
        self.dw[...] = dw_mat.reshape(self.in_ch, self.kh, self.kw, self.out_ch).transpose(1, 2, 0, 3)
        self.db[...] = dflat.sum(axis=0)
        self._cols = None

        # dx is the full correlation of dout with the flipped, transposed kernel:
        # rows ordered (out_ch, kh, kw) to match the sliding windows over dout.
        w_back_mat = self.w[::-1, ::-1].transpose(3, 0, 1, 2).reshape(-1, self.in_ch)
        dx_full, _ = _correlate(dout, w_back_mat, self.kh, self.kw,
                                self.kh - 1, self.kw - 1, self.in_ch)
        # crop back through the forward padding
        return dx_full[:, self.ph:self.ph + h, self.pw:self.pw + w, :]

    def params(self):
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def grads(self):
        return {f"{self.name}.w": self.dw, f"{self.name}.b": self.db}


class BatchNorm(Layer):
    """Batch normalization over all axes but the last (channels/features).

    Train mode normalizes with batch statistics and updates running stats;
    infer mode uses the running statistics. The backward pass differentiates
    through the batch mean and variance.
    """

    def __init__(self, name: str, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5, dtype=np.float32):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self._xhat: np.ndarray | None = None
        self._inv_std: np.ndarray | None = None

    def forward(self, x, train):
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            self._xhat, self._inv_std = xhat, inv_std.astype(x.dtype)
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
        return self.gamma * xhat + self.beta

    def backward(self, dout):
        assert self._xhat is not None, "backward before forward"
        xhat, inv_std = self._xhat, self._inv_std
        axes = tuple(range(dout.ndim - 1))
        m = dout.size // dout.shape[-1]
        self.dgamma[...] = (dout * xhat).sum(axis=axes)
        self.dbeta[...] = dout.sum(axis=axes)
        # standard reduced form of the batch-statistics chain rule
        dx = (self.gamma * inv_std / m) * (
            m * dout - self.dbeta - xhat * self.dgamma)
        self._xhat = None
        self._inv_std = None
        return dx.astype(dout.dtype, copy=False)

    def params(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def grads(self):
        return {f"{self.name}.gamma": self.dgamma, f"{self.name}.beta": self.dbeta}

    def state(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}


class ReLU(Layer):
    def __init__(self, name: str):
        self.name = name
        self._mask: np.ndarray | None = None

    def forward(self, x, train):
        if train:
            self._mask = x > 0
            return x * self._mask
        return np.maximum(x, 0)

    def backward(self, dout):
        assert self._mask is not None, "backward before forward"
        dx = dout * self._mask
        self._mask = None
        return dx


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; ties route the gradient to the first max."""

    def __init__(self, name: str):
        self.name = name
        self._argmax: np.ndarray | None = None
        self._in_shape: tuple[int, ...] | None = None

    def forward(self, x, train):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        flat = win.reshape(n, h // 2, w // 2, c, 4)
        idx = flat.argmax(axis=-1)
        if train:
            self._argmax = idx.astype(np.int8)
            self._in_shape = x.shape
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        assert self._argmax is not None, "backward before forward"
        n, h, w, c = self._in_shape
        scattered = np.zeros((n, h // 2, w // 2, c, 4), dtype=dout.dtype)
        np.put_along_axis(scattered, self._argmax[..., None].astype(np.int64),
                          dout[..., None], axis=-1)
        dx = scattered.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        self._argmax = None
        return dx.reshape(n, h, w, c)


class Dropout(Layer):
    """Inverted dropout; active only in train mode."""

    def __init__(self, name: str, rate: float, rng: np.random.Generator):
        self.name = name
        self.rate = rate
        self.rng = rng
        self._mask: np.ndarray | None = None

    def forward(self, x, train):
        if not train or self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        dx = dout * self._mask
        self._mask = None
        return dx


class Flatten(Layer):
    def __init__(self, name: str):
        self.name = name
        self._in_shape: tuple[int, ...] | None = None

    def forward(self, x, train):
        if train:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        assert self._in_shape is not None, "backward before forward"
        return dout.reshape(self._in_shape)


class Dense(Layer):
    def __init__(self, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.name = name
        limit = np.sqrt(6.0 / in_dim)
        self.w = rng.uniform(-limit, limit, size=(in_dim, out_dim)).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def forward(self, x, train):
        if train:
            self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        assert self._x is not None, "backward before forward"
        self.dw[...] = self._x.T @ dout
        self.db[...] = dout.sum(axis=0)
        dx = dout @ self.w.T
        self._x = None
        return dx

    def params(self):
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def grads(self):
        return {f"{self.name}.w": self.dw, f"{self.name}.b": self.db}
