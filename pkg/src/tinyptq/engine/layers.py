"""Functional forward/backward kernels for every supported layer kind.

Activations are float64 numpy arrays in batch-first layout: (N, H, W, C)
for 2-d feature maps, (N, L, C) for 1-d, (N, D) for vectors. Weight
layouts: conv2d (Kh, Kw, Cin, Cout), depthwise (Kh, Kw, C), conv1d
(K, Cin, Cout), fully-connected (Cin, Cout).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class EngineError(Exception):
    pass


class ShapeError(EngineError):
    pass


class StateError(EngineError):
    pass


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """TensorFlow-style SAME padding split (before, after)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_out_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    if padding == "valid":
        if size < kernel:
            raise ShapeError(f"valid padding needs size >= kernel, got {size} < {kernel}")
        return (size - kernel) // stride + 1
    raise ShapeError(f"unknown padding mode {padding!r}")


def _pad2d(x, kh, kw, sh, sw, padding):
    if padding == "valid":
        return x, (0, 0, 0, 0)
    ph0, ph1 = same_padding(x.shape[1], kh, sh)
    pw0, pw1 = same_padding(x.shape[2], kw, sw)
    xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
    return xp, (ph0, ph1, pw0, pw1)


def _patches2d(x, kh, kw, sh, sw, padding):
    """Strided windows (N, Ho, Wo, C, kh, kw) plus the padded input."""
    xp, pads = _pad2d(x, kh, kw, sh, sw, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win[:, ::sh, ::sw], xp, pads


def conv2d_forward(x, w, b, stride, padding):
    kh, kw, cin, cout = w.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise ShapeError(f"conv2d expects (N,H,W,{cin}), got {x.shape}")
    sh, sw = stride
    win, _, _ = _patches2d(x, kh, kw, sh, sw, padding)
    y = np.tensordot(win, w, axes=([3, 4, 5], [2, 0, 1]))
    return y + b


def conv2d_backward(x, w, stride, padding, dy, need_dx=True):
    kh, kw, cin, cout = w.shape
    sh, sw = stride
    win, xp, (ph0, ph1, pw0, pw1) = _patches2d(x, kh, kw, sh, sw, padding)
    db = dy.sum(axis=(0, 1, 2))
    dw = np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2]))  # (C, kh, kw, O)
    dw = dw.transpose(1, 2, 0, 3)
    dx = None
    if need_dx:
        dxp = np.zeros_like(xp)
        ho, wo = dy.shape[1], dy.shape[2]
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + sh * ho : sh, j : j + sw * wo : sw, :] += np.tensordot(
                    dy, w[i, j], axes=([3], [1])
                )
        dx = dxp[:, ph0 : dxp.shape[1] - ph1, pw0 : dxp.shape[2] - pw1, :]
    return dx, dw, db


def dwconv2d_forward(x, w, b, stride, padding):
    kh, kw, c = w.shape
    if x.ndim != 4 or x.shape[3] != c:
        raise ShapeError(f"dwconv2d expects (N,H,W,{c}), got {x.shape}")
    sh, sw = stride
    win, _, _ = _patches2d(x, kh, kw, sh, sw, padding)
    y = np.einsum("nhwcij,ijc->nhwc", win, w)
    return y + b


def dwconv2d_backward(x, w, stride, padding, dy, need_dx=True):
    kh, kw, c = w.shape
    sh, sw = stride
    win, xp, (ph0, ph1, pw0, pw1) = _patches2d(x, kh, kw, sh, sw, padding)
    db = dy.sum(axis=(0, 1, 2))
    dw = np.einsum("nhwcij,nhwc->ijc", win, dy)
    dx = None
    if need_dx:
        dxp = np.zeros_like(xp)
        ho, wo = dy.shape[1], dy.shape[2]
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + sh * ho : sh, j : j + sw * wo : sw, :] += dy * w[i, j]
        dx = dxp[:, ph0 : dxp.shape[1] - ph1, pw0 : dxp.shape[2] - pw1, :]
    return dx, dw, db


def _pad1d(x, k, s, padding):
    if padding == "valid":
        return x, (0, 0)
    p0, p1 = same_padding(x.shape[1], k, s)
    return np.pad(x, ((0, 0), (p0, p1), (0, 0))), (p0, p1)


def conv1d_forward(x, w, b, stride, padding):
    k, cin, cout = w.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ShapeError(f"conv1d expects (N,L,{cin}), got {x.shape}")
    (s,) = stride
    xp, _ = _pad1d(x, k, s, padding)
    win = sliding_window_view(xp, k, axis=1)[:, ::s]  # (N, Lo, C, k)
    y = np.tensordot(win, w, axes=([2, 3], [1, 0]))
    return y + b


def conv1d_backward(x, w, stride, padding, dy, need_dx=True):
    k, cin, cout = w.shape
    (s,) = stride
    xp, (p0, p1) = _pad1d(x, k, s, padding)
    win = sliding_window_view(xp, k, axis=1)[:, ::s]
    db = dy.sum(axis=(0, 1))
    dw = np.tensordot(win, dy, axes=([0, 1], [0, 1]))  # (C, k, O)
    dw = dw.transpose(1, 0, 2)
    dx = None
    if need_dx:
        dxp = np.zeros_like(xp)
        lo = dy.shape[1]
        for i in range(k):
            dxp[:, i : i + s * lo : s, :] += np.tensordot(dy, w[i], axes=([2], [1]))
        dx = dxp[:, p0 : dxp.shape[1] - p1, :]
    return dx, dw, db


def fc_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"fc expects (N,{w.shape[0]}), got {x.shape}")
    return x @ w + b


def fc_backward(x, w, dy, need_dx=True):
    db = dy.sum(axis=0)
    dw = x.T @ dy
    dx = dy @ w.T if need_dx else None
    return dx, dw, db


def _pool_windows(x, kernel, stride):
    """Valid-padding pooling windows, dims (N, *out, C, *kernel)."""
    if x.ndim == 4:
        kh, kw = kernel
        sh, sw = stride
        win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
        return win.reshape(win.shape[:4] + (kh * kw,))
    (k,) = kernel
    (s,) = stride
    win = sliding_window_view(x, k, axis=1)[:, ::s]
    return win


def avgpool_forward(x, kernel, stride):
    win = _pool_windows(x, kernel, stride)
    return win.mean(axis=-1)


def avgpool_backward(x, kernel, stride, dy):
    area = int(np.prod(kernel))
    dx = np.zeros_like(x)
    share = dy / area
    if x.ndim == 4:
        kh, kw = kernel
        sh, sw = stride
        ho, wo = dy.shape[1], dy.shape[2]
        for i in range(kh):
            for j in range(kw):
                dx[:, i : i + sh * ho : sh, j : j + sw * wo : sw, :] += share
    else:
        (k,) = kernel
        (s,) = stride
        lo = dy.shape[1]
        for i in range(k):
            dx[:, i : i + s * lo : s, :] += share
    return dx


def maxpool_forward(x, kernel, stride):
    win = _pool_windows(x, kernel, stride)
    return win.max(axis=-1)


def maxpool_backward(x, kernel, stride, dy):
    win = _pool_windows(x, kernel, stride)
    arg = win.argmax(axis=-1)  # ties resolve to the first index: deterministic
    dx = np.zeros_like(x)
    if x.ndim == 4:
        kh, kw = kernel
        sh, sw = stride
        ho, wo = dy.shape[1], dy.shape[2]
        for idx in range(kh * kw):
            i, j = divmod(idx, kw)
            mask = arg == idx
            dx[:, i : i + sh * ho : sh, j : j + sw * wo : sw, :] += dy * mask
    else:
        (k,) = kernel
        (s,) = stride
        lo = dy.shape[1]
        for i in range(k):
            dx[:, i : i + s * lo : s, :] += dy * (arg == i)
    return dx


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    return dy * (x > 0)


def batchnorm_forward(x, gamma, beta, mean, var, eps):
    inv = gamma / np.sqrt(var + eps)
    return (x - mean) * inv + beta


def batchnorm_backward(x, gamma, var, eps, dy):
    return dy * (gamma / np.sqrt(var + eps))


def add_forward(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"residual add needs equal shapes, got {a.shape} vs {b.shape}")
    return a + b


def flatten_forward(x):
    return x.reshape(x.shape[0], -1)


def flatten_backward(x_shape, dy):
    return dy.reshape(x_shape)
