"""Array-level building blocks: convolution, pooling, softmax loss, Adam,
patch extraction and multi-head attention."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def conv_out_dim(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(f"({n} + 2*{pad} - {k}) is not divisible by stride {stride}")
    return span // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """``(N, C, H, W)`` → ``(N, H', W', C*kh*kw)`` patch matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * kh * kw)


def col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of :func:`im2col`; overlapping windows are summed."""
    n, c, h, w = shape
    ho, wo = cols.shape[1:3]
    cols = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def conv2d(x: np.ndarray, kernels: np.ndarray, stride: int = 1, pad: int = 0,
           bias: np.ndarray | None = None) -> np.ndarray:
    """Cross-correlation of ``(C, H, W)`` (or batched ``(N, C, H, W)``) input with
    ``(K, C, kh, kw)`` kernels, zero padded."""
    single = x.ndim == 3
    if single:
        x = x[None]
    k, c, kh, kw = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("kernel height and width must be odd")
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernels expect {c}")
    conv_out_dim(x.shape[2], kh, stride, pad)
    conv_out_dim(x.shape[3], kw, stride, pad)
    cols = im2col(x, kh, kw, stride, pad)
    y = cols @ kernels.reshape(k, -1).T
    if bias is not None:
        y = y + bias
    y = y.transpose(0, 3, 1, 2)
    return y[0] if single else y


def maxpool(x: np.ndarray, size: int = 2) -> np.ndarray:
    h, w = x.shape[-2:]
    if h % size or w % size:
        raise ShapeError(f"spatial dims {h}x{w} are not divisible by pool size {size}")
    win = x.reshape(*x.shape[:-2], h // size, size, w // size, size)
    return win.max(axis=(-3, -1))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_xent(logits: np.ndarray, target) -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax(logits) against integer target(s).

    For a batch ``(N, n)`` the loss is the mean over rows and the gradient is
    scaled accordingly.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    t = np.atleast_1d(np.asarray(target, dtype=int))
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(len(t)), t] - logsum
    loss = float(-logp.mean())
    grad = np.exp(shifted - logsum[:, None])
    grad[np.arange(len(t)), t] -= 1
    grad /= len(t)
    return loss, (grad[0] if single else grad)


class Adam:
    """Bias-corrected Adam over a dict of named arrays, updated in place."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        adam_step(params, grads, self.m, self.v, self.t, lr, self.beta1, self.beta2, self.eps)


def adam_step(params: dict, grads: dict, m: dict, v: dict, t: int, lr: float,
              beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8) -> None:
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        m[name] *= beta1
        m[name] += (1 - beta1) * g
        v[name] *= beta2
        v[name] += (1 - beta2) * g * g
        p -= (lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)).astype(p.dtype)


def patch_grid(side: int, patch: int) -> tuple[int, int]:
    """Padded side and patches per row for a ``side x side`` image."""
    if patch < 1 or patch > side:
        raise ShapeError(f"patch {patch} does not fit a {side}px image")
    padded = -(-side // patch) * patch
    return padded, padded // patch


def patchify_array(x: np.ndarray, patch: int) -> np.ndarray:
    """``(N, S, S)`` images → ``(N, num_patches, patch*patch)``.

    Images are zero-padded on the right and bottom to a multiple of ``patch``;
    patches are ordered row-major and flattened row-major.
    """
    n, h, w = x.shape
    if h != w:
        raise ShapeError("images must be square")
    padded, per_row = patch_grid(h, patch)
    if padded != h:
        x = np.pad(x, ((0, 0), (0, padded - h), (0, padded - w)))
    x = x.reshape(n, per_row, patch, per_row, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(n, per_row * per_row, patch * patch)


def patchify(mask, patch: int) -> np.ndarray:
    """Single ``BinaryMask`` → ``(num_patches, patch*patch)`` float32 in {0, 1}."""
    x = (np.asarray(mask.pixels) > 0).astype(np.float32)[None]
    return patchify_array(x, patch)[0]


def mhsa(x: np.ndarray, heads: int, wq, wk, wv, wo, bq=None, bk=None, bv=None, bo=None,
         return_attention: bool = False):
    """Multi-head scaled dot-product self-attention over ``(..., T, d)`` tokens."""
    d = x.shape[-1]
    if d % heads:
        raise ShapeError(f"{heads} heads do not divide model width {d}")
    dh = d // heads

    def proj(w, b):
        y = x @ w
        return y if b is None else y + b

    def split(y):
        return y.reshape(*y.shape[:-1], heads, dh).swapaxes(-2, -3)

    q, k, v = split(proj(wq, bq)), split(proj(wk, bk)), split(proj(wv, bv))
    att = softmax((q @ k.swapaxes(-1, -2)) / np.sqrt(dh), axis=-1)
    o = (att @ v).swapaxes(-2, -3)
    o = o.reshape(*o.shape[:-2], d)
    y = o @ wo
    if bo is not None:
        y = y + bo
    return (y, att) if return_attention else y
