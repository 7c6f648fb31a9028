"""Forward and backward passes for the handful of layers the U-Net needs.

Feature maps are channels-first ``(C, H, W)`` arrays for a single image.
Convolutions use zero padding of ``k // 2`` and are computed as one matrix
product over an im2col buffer.
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.2


def im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, tuple[int, int]]:
    c, h, w = x.shape
    p = k // 2
    ho, wo = (h + 2 * p - k) // stride + 1, (w + 2 * p - k) // stride + 1
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((c, k, k, ho, wo), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[:, ky, kx] = xp[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride]
    return cols.reshape(c * k * k, ho * wo), (ho, wo)


def col2im(dcols: np.ndarray, x_shape, k: int, stride: int, out_hw) -> np.ndarray:
    c, h, w = x_shape
    p = k // 2
    ho, wo = out_hw
    dcols = dcols.reshape(c, k, k, ho, wo)
    dxp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    for ky in range(k):
        for kx in range(k):
            dxp[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += dcols[:, ky, kx]
    return dxp[:, p:p + h, p:p + w] if p else dxp


def conv_forward(x, w, b, stride=1):
    cout, cin, k, _ = w.shape
    if x.shape[0] != cin:
        raise ValueError(f"conv expects {cin} input channels, got {x.shape[0]}")
    cols, (ho, wo) = im2col(x, k, stride)
    y = w.reshape(cout, -1) @ cols
    y += b[:, None]
    return y.reshape(cout, ho, wo), (cols, x.shape, stride, (ho, wo))


def conv_backward(dy, w, cache, need_dx=True):
    cols, x_shape, stride, out_hw = cache
    cout, _, k, _ = w.shape
    dy2 = dy.reshape(cout, -1)
    dw = (dy2 @ cols.T).reshape(w.shape)
    db = dy2.sum(axis=1)
    dx = None
    if need_dx:
        dx = col2im(w.reshape(cout, -1).T @ dy2, x_shape, k, stride, out_hw)
    return dx, dw, db


def leaky_relu(x, slope=LEAKY_SLOPE):
    if 0 <= slope <= 1:
        return np.maximum(x, slope * x)
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(dy, x, slope=LEAKY_SLOPE):
    return np.where(x > 0, dy, slope * dy)


def upsample2(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dy):
    c, h, w = dy.shape
    return dy.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


# Nearest x2 upsampling followed by a 3x3 conv, evaluated at low resolution.
# Output phase p (row or column parity) sees low-res offsets {-1, 0} (p=0) or
# {0, +1} (p=1); _FOLD[p] sums the 3x3 taps that land on each offset.
_FOLD = (np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]),
         np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
_PHASES = ((0, 0), (0, 1), (1, 0), (1, 1))


def _fold(w, py, px):
    """(o, i, 3, 3) kernel -> (o, i, 2, 2) kernel for one output phase."""
    t = np.tensordot(w, _FOLD[px].astype(w.dtype), axes=([3], [1]))   # o,i,y,b
    t = np.tensordot(t, _FOLD[py].astype(w.dtype), axes=([2], [1]))   # o,i,b,a
    return t.transpose(0, 1, 3, 2)


def _unfold(dk, py, px):
    """Adjoint of :func:`_fold`."""
    t = np.tensordot(dk, _FOLD[px].astype(dk.dtype), axes=([3], [0]))  # o,i,a,x
    t = np.tensordot(t, _FOLD[py].astype(dk.dtype), axes=([2], [0]))   # o,i,x,y
    return t.transpose(0, 1, 3, 2)


def upconv_forward(x, w, b):
    """Equivalent to ``conv_forward(upsample2(x), w, b)`` for a 3x3 kernel."""
    cout, cin, _, _ = w.shape
    if x.shape[0] != cin:
        raise ValueError(f"conv expects {cin} input channels, got {x.shape[0]}")
    cols, (h, wd) = im2col(x, 3, 1)
    cols = cols.reshape(cin, 3, 3, h * wd)
    y = np.empty((cout, 2 * h, 2 * wd), dtype=x.dtype)
    sub_cols, kernels = [], []
    for py, px in _PHASES:
        k = np.ascontiguousarray(_fold(w, py, px)).reshape(cout, cin * 4)
        c = np.ascontiguousarray(cols[:, py:py + 2, px:px + 2]).reshape(cin * 4, h * wd)
        yp = k @ c
        yp += b[:, None]
        y[:, py::2, px::2] = yp.reshape(cout, h, wd)
        sub_cols.append(c)
        kernels.append(k)
    return y, (sub_cols, kernels, x.shape)


def upconv_backward(dy, w, cache, need_dx=True):
    sub_cols, kernels, x_shape = cache
    cout, cin, _, _ = w.shape
    _, h, wd = x_shape
    dw = np.zeros_like(w)
    db = dy.reshape(cout, -1).sum(axis=1)
    dcols = np.zeros((cin, 3, 3, h * wd), dtype=dy.dtype) if need_dx else None
    for (py, px), c, k in zip(_PHASES, sub_cols, kernels):
        dyp = np.ascontiguousarray(dy[:, py::2, px::2]).reshape(cout, -1)
        dw += _unfold((dyp @ c.T).reshape(cout, cin, 2, 2), py, px)
        if need_dx:
            dc = (k.T @ dyp).reshape(cin, 2, 2, h * wd)
            dcols[:, py:py + 2, px:px + 2] += dc
    dx = col2im(dcols.reshape(cin * 9, h * wd), x_shape, 3, 1, (h, wd)) if need_dx else None
    return dx, dw, db


def l2_loss(pred, target) -> float:
    """Mean squared error over all elements."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def l2_loss_backward(pred, target):
    return (2.0 / pred.size) * (pred - target)
