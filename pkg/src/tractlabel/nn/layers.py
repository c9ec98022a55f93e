"""Differentiable layers on ``(batch, channels, length)`` arrays.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` on ``backward``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv1d(Layer):
    """Cross-correlation with zero "same" padding; ``ksize`` must be odd."""

    def __init__(self, in_ch, out_ch, ksize, rng, dtype=np.float32):
        super().__init__()
        if ksize % 2 != 1:
            raise ShapeError("kernel size must be odd for same-length padding")
        self.in_ch, self.out_ch, self.ksize = in_ch, out_ch, ksize
        fan_in = in_ch * ksize
        self.params["W"] = _uniform(rng, (out_ch, in_ch, ksize), fan_in, dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=True):
        if x.ndim != 3 or x.shape[1] != self.in_ch:
            raise ShapeError(f"conv expects (B, {self.in_ch}, L), got {x.shape}")
        B, C, L = x.shape
        pad = self.ksize // 2
        lp = L + 2 * pad
        # the padded batch laid out as one (C, B * lp) stream: each tap is a
        # plain GEMM over a column slice; columns straddling two samples are
        # computed and then discarded
        xs = np.zeros((C, B, lp), dtype=x.dtype)
        xs[:, :, pad : pad + L] = x.transpose(1, 0, 2)
        xs = xs.reshape(C, B * lp)
        m = B * lp - 2 * pad
        # per-tap weights made contiguous so matmul can hand them to BLAS
        taps = np.ascontiguousarray(self.params["W"].transpose(2, 0, 1))
        y = np.zeros((self.out_ch, B * lp), dtype=np.result_type(x, taps))
        for k in range(self.ksize):
            y[:, :m] += taps[k] @ xs[:, k : k + m]
        self._cache = (xs, B, L)
        out = y.reshape(self.out_ch, B, lp)[:, :, :L].transpose(1, 0, 2)
        return out + self.params["b"][None, :, None]

    def backward(self, dout):
        xs, B, L = self._cache
        K, pad = self.ksize, self.ksize // 2
        lp = L + 2 * pad
        m = B * lp - 2 * pad
        dy = np.zeros((self.out_ch, B, lp), dtype=dout.dtype)
        dy[:, :, :L] = dout.transpose(1, 0, 2)
        dy = dy.reshape(self.out_ch, B * lp)[:, :m]
        taps_t = np.ascontiguousarray(self.params["W"].transpose(2, 1, 0))
        dxs = np.zeros_like(xs, dtype=dout.dtype)
        for k in range(K):
            self.grads["W"][:, :, k] += dy @ xs[:, k : k + m].T
            dxs[:, k : k + m] += taps_t[k] @ dy
        self.grads["b"] += dout.sum(axis=(0, 2))
        dx = dxs.reshape(-1, B, lp)[:, :, pad : pad + L]
        return np.ascontiguousarray(dx.transpose(1, 0, 2))


class BatchNorm1d(Layer):
    """Per-channel normalization over (batch, length).

    Running variance is updated with the unbiased batch variance.
    """

    def __init__(self, ch, dtype=np.float32, momentum=BN_MOMENTUM, eps=BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(ch, dtype=dtype)
        self.params["beta"] = np.zeros(ch, dtype=dtype)
        self.buffers = {
            "running_mean": np.zeros(ch, dtype=dtype),
            "running_var": np.ones(ch, dtype=dtype),
        }
        self.zero_grad()

    def forward(self, x, train=True):
        g = self.params["gamma"][None, :, None]
        b = self.params["beta"][None, :, None]
        if train:
            n = x.shape[0] * x.shape[2]
            mu = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            invstd = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu[None, :, None]) * invstd[None, :, None]
            if n > 1:
                m = self.momentum
                rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
                rm *= 1 - m
                rm += m * mu
                rv *= 1 - m
                rv += m * var * (n / (n - 1))
            self._cache = ("train", xhat, invstd)
        else:
            invstd = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"][None, :, None]) * invstd[None, :, None]
            self._cache = ("eval", xhat, invstd)
        return (g * xhat + b).astype(x.dtype, copy=False)

    def backward(self, dout):
        mode, xhat, invstd = self._cache
        self.grads["gamma"] += (dout * xhat).sum(axis=(0, 2))
        self.grads["beta"] += dout.sum(axis=(0, 2))
        dxhat = dout * self.params["gamma"][None, :, None]
        if mode == "eval":
            return dxhat * invstd[None, :, None]
        n = dout.shape[0] * dout.shape[2]
        s1 = dxhat.sum(axis=(0, 2), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
        return (invstd[None, :, None] / n) * (n * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    def forward(self, x, train=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool1d(Layer):
    """Non-overlapping max pooling; a trailing remainder shorter than the
    window is dropped. Ties route the gradient to the first maximum."""

    def __init__(self, window=2):
        super().__init__()
        self.window = window

    def forward(self, x, train=True):
        B, C, L = x.shape
        Lo = L // self.window
        if Lo < 1:
            raise ShapeError(f"length {L} shorter than pool window {self.window}")
        xr = x[:, :, : Lo * self.window].reshape(B, C, Lo, self.window)
        self._arg = xr.argmax(axis=3)
        self._shape = x.shape
        return np.take_along_axis(xr, self._arg[..., None], axis=3)[..., 0]

    def backward(self, dout):
        B, C, L = self._shape
        Lo = dout.shape[2]
        dxr = np.zeros((B, C, Lo, self.window), dtype=dout.dtype)
        np.put_along_axis(dxr, self._arg[..., None], dout[..., None], axis=3)
        dx = np.zeros(self._shape, dtype=dout.dtype)
        dx[:, :, : Lo * self.window] = dxr.reshape(B, C, Lo * self.window)
        return dx


class Linear(Layer):
    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.params["W"] = _uniform(rng, (out_features, in_features), in_features, dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear expects (B, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dout):
        self.grads["W"] += dout.T @ self._x
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, target):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    ``logits`` is ``(B, C)`` (or ``(C,)`` for one sample), ``target`` holds
    class ids.
    """
    single = logits.ndim == 1
    logits = np.atleast_2d(logits)
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(B), target]))
    grad = softmax(logits)
    grad[np.arange(B), target] -= 1.0
    grad /= B
    return loss, (grad[0] if single else grad)
