"""Layers with hand-written backward passes.

Each layer caches what its backward needs during ``forward`` and accumulates
parameter gradients into ``self.grads`` during ``backward``. Layers are used
once per forward/backward pair; they are not re-entrant.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .ops import col2im, im2col, softmax


def he_uniform(rng, shape, fan_in, dtype):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def trunc_normal(rng, shape, std, dtype):
    # resample anything beyond two standard deviations
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class Layer:
    def __init__(self):
        self.params: dict = {}
        self.grads: dict = {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _acc(self, name, g):
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g.astype(self.params[name].dtype, copy=True)

    def named_children(self):
        return []

    def forward(self, x, train: bool = False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2D(Layer):
    """3x3 (or any odd) convolution, stride 1, 'same' zero padding."""

    def __init__(self, cin, cout, k, rng, dtype):
        super().__init__()
        self.k = k
        self.params["w"] = he_uniform(rng, (cout, cin, k, k), cin * k * k, dtype)
        self.params["b"] = np.zeros(cout, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        w = self.params["w"]
        pad = self.k // 2
        cols = im2col(x, self.k, self.k, 1, pad)
        self._cache = (cols, x.shape)
        y = cols @ w.reshape(w.shape[0], -1).T + self.params["b"]
        return y.transpose(0, 3, 1, 2)

    def backward(self, dy):
        cols, shape = self._cache
        w = self.params["w"]
        dy2 = dy.transpose(0, 2, 3, 1)
        flat = dy2.reshape(-1, dy2.shape[-1])
        self._acc("w", (flat.T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape))
        self._acc("b", flat.sum(axis=0))
        dcols = dy2 @ w.reshape(w.shape[0], -1)
        return col2im(dcols, shape, self.k, self.k, 1, self.k // 2)


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class GELU(Layer):
    """Exact (erf) GELU."""

    def forward(self, x, train=False, rng=None):
        self._x = x
        self._cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0))).astype(x.dtype)
        return x * self._cdf

    def backward(self, dy):
        x = self._x
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        return dy * (self._cdf + x * pdf).astype(dy.dtype)


class MaxPool2(Layer):
    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h // 2, w // 2, 4)
        # route the gradient to the first maximal element only
        self._arg = win.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        n, c, h, w = self._shape
        win = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(win, self._arg[..., None], dy[..., None], axis=-1)
        return win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h, w)


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    def __init__(self, din, dout, rng, dtype, init="he"):
        super().__init__()
        if init == "he":
            self.params["w"] = he_uniform(rng, (din, dout), din, dtype)
        else:
            self.params["w"] = trunc_normal(rng, (din, dout), 0.02, dtype)
        self.params["b"] = np.zeros(dout, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        x = self._x
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self._acc("w", x2.T @ dy2)
        self._acc("b", dy2.sum(axis=0))
        return dy @ self.params["w"].T


class Dropout(Layer):
    """Inverted dropout; identity outside training or when ``p == 0``."""

    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0:
            self._mask = None
            return x
        keep = 1.0 - self.p
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class LayerNorm(Layer):
    def __init__(self, d, dtype, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.params["g"] = np.ones(d, dtype=dtype)
        self.params["b"] = np.zeros(d, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv)
        return xhat * self.params["g"] + self.params["b"]

    def backward(self, dy):
        xhat, inv = self._cache
        d = xhat.shape[-1]
        self._acc("g", (dy * xhat).reshape(-1, d).sum(axis=0))
        self._acc("b", dy.reshape(-1, d).sum(axis=0))
        dxhat = dy * self.params["g"]
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


class MultiHeadSelfAttention(Layer):
    def __init__(self, d, heads, rng, dtype):
        super().__init__()
        if d % heads:
            raise ValueError(f"{heads} heads do not divide width {d}")
        self.heads = heads
        for name in ("q", "k", "v", "o"):
            self.params["w" + name] = trunc_normal(rng, (d, d), 0.02, dtype)
            self.params["b" + name] = np.zeros(d, dtype=dtype)

    def _split(self, y):
        n, t, d = y.shape
        return y.reshape(n, t, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def _merge(self, y):
        n, h, t, dh = y.shape
        return y.transpose(0, 2, 1, 3).reshape(n, t, h * dh)

    def forward(self, x, train=False, rng=None):
        p = self.params
        q = self._split(x @ p["wq"] + p["bq"])
        k = self._split(x @ p["wk"] + p["bk"])
        v = self._split(x @ p["wv"] + p["bv"])
        scale = 1.0 / math.sqrt(q.shape[-1])
        att = softmax((q @ k.transpose(0, 1, 3, 2)) * scale, axis=-1)
        o = self._merge(att @ v)
        self._cache = (x, q, k, v, att, o, scale)
        return o @ p["wo"] + p["bo"]

    def backward(self, dy):
        x, q, k, v, att, o, scale = self._cache
        p = self.params
        d = x.shape[-1]
        self._acc("wo", o.reshape(-1, d).T @ dy.reshape(-1, d))
        self._acc("bo", dy.reshape(-1, d).sum(axis=0))
        do = self._split(dy @ p["wo"].T)
        datt = do @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dx = np.zeros_like(x)
        x2 = x.reshape(-1, d)
        for name, g in (("q", dq), ("k", dk), ("v", dv)):
            g = self._merge(g)
            self._acc("w" + name, x2.T @ g.reshape(-1, d))
            self._acc("b" + name, g.reshape(-1, d).sum(axis=0))
            dx += g @ p["w" + name].T
        return dx


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def named_children(self):
        return [(str(i), l) for i, l in enumerate(self.layers)]

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Residual(Layer):
    """``x + body(x)``."""

    def __init__(self, body):
        super().__init__()
        self.body = body

    def named_children(self):
        return [("body", self.body)]

    def forward(self, x, train=False, rng=None):
        return x + self.body.forward(x, train, rng)

    def backward(self, dy):
        return dy + self.body.backward(dy)


def encoder_block(d, heads, mlp_dim, rng, dtype):
    """Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x))."""
    return Sequential([
        Residual(Sequential([LayerNorm(d, dtype), MultiHeadSelfAttention(d, heads, rng, dtype)])),
        Residual(Sequential([LayerNorm(d, dtype), Dense(d, mlp_dim, rng, dtype),
                             GELU(), Dense(mlp_dim, d, rng, dtype)])),
    ])


class PatchEmbed(Layer):
    """Linear patch projection plus a learned positional embedding per token."""

    def __init__(self, patch_len, n_tokens, d, rng, dtype):
        super().__init__()
        self.params["w"] = trunc_normal(rng, (patch_len, d), 0.02, dtype)
        self.params["b"] = np.zeros(d, dtype=dtype)
        self.params["pos"] = trunc_normal(rng, (n_tokens, d), 0.02, dtype)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.params["w"] + self.params["b"] + self.params["pos"]

    def backward(self, dy):
        x = self._x
        d = dy.shape[-1]
        self._acc("w", x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, d))
        self._acc("b", dy.reshape(-1, d).sum(axis=0))
        self._acc("pos", dy.sum(axis=0))
        return dy @ self.params["w"].T


class MeanTokens(Layer):
    def forward(self, x, train=False, rng=None):
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, dy):
        return np.repeat(dy[:, None, :] / self._t, self._t, axis=1)


def iter_params(layer, prefix=""):
    """Yield ``(dotted_name, layer, key)`` for every parameter, depth first."""
    for key in layer.params:
        yield (f"{prefix}{key}", layer, key)
    for name, child in layer.named_children():
        yield from iter_params(child, f"{prefix}{name}.")
