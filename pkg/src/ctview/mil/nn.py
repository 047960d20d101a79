"""Dense numpy building blocks for the slice classifier.

Everything is float64 and written as forward/backward pairs so the trainer
can assemble exact analytic gradients. Convolutions are 3x3, stride 1,
pad 1, implemented as im2col + GEMM; pooling is 2x2 max with the first
maximum winning ties (deterministic).
"""

from __future__ import annotations

import numpy as np


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x (B, C, H, W), w (F, C, 3, 3), b (F,) -> out (B, F, H, W), cols cache."""
    B, C, H, W = x.shape
    F = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((B, C, 9, H, W), dtype=np.float64)
    for t in range(9):
        dy, dx = divmod(t, 3)
        cols[:, :, t] = xp[:, :, dy:dy + H, dx:dx + W]
    cols2 = cols.reshape(B, C * 9, H * W)
    wmat = w.reshape(F, C * 9)
    out = np.matmul(wmat, cols2).reshape(B, F, H, W) + b[None, :, None, None]
    return out, cols2


def conv2d_backward(dout: np.ndarray, w: np.ndarray, cols2: np.ndarray,
                    x_shape: tuple):
    B, C, H, W = x_shape
    F = w.shape[0]
    dout2 = dout.reshape(B, F, H * W)
    db = dout.sum(axis=(0, 2, 3))
    dwmat = np.einsum("bfp,bcp->fc", dout2, cols2)
    dw = dwmat.reshape(w.shape)
    dcols = np.matmul(w.reshape(F, C * 9).T, dout2).reshape(B, C, 9, H, W)
    dxp = np.zeros((B, C, H + 2, W + 2), dtype=np.float64)
    for t in range(9):
        dy, dx = divmod(t, 3)
        dxp[:, :, dy:dy + H, dx:dx + W] += dcols[:, :, t]
    return dxp[:, :, 1:H + 1, 1:W + 1], dw, db


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray):
    return dout * mask


def maxpool2x2_forward(x: np.ndarray):
    """2x2/stride-2 max pool; odd trailing rows/cols are dropped."""
    B, C, H, W = x.shape
    H2, W2 = H // 2, W // 2
    v = x[:, :, :H2 * 2, :W2 * 2].reshape(B, C, H2, 2, W2, 2)
    v = v.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H2, W2, 4)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(dout: np.ndarray, idx: np.ndarray, x_shape: tuple):
    B, C, H, W = x_shape
    H2, W2 = H // 2, W // 2
    dv = np.zeros((B, C, H2, W2, 4), dtype=np.float64)
    np.put_along_axis(dv, idx[..., None], dout[..., None], axis=-1)
    dv = dv.reshape(B, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros((B, C, H, W), dtype=np.float64)
    dx[:, :, :H2 * 2, :W2 * 2] = dv.reshape(B, C, H2 * 2, W2 * 2)
    return dx


def gap_forward(x: np.ndarray):
    """Global average pool (B, C, H, W) -> (B, C)."""
    return x.mean(axis=(2, 3)), x.shape


def gap_backward(dout: np.ndarray, x_shape: tuple):
    B, C, H, W = x_shape
    return np.broadcast_to(dout[:, :, None, None], x_shape) / (H * W)


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(H: np.ndarray, V: np.ndarray, w: np.ndarray):
    """Gated attention pooling over instance features.

    H (K, D), V (L, D), w (L,) -> weights a (K,), pooled z (D,), cache.
    """
    t = np.tanh(H @ V.T)          # (K, L)
    e = t @ w                     # (K,)
    a = softmax(e)
    z = a @ H                     # (D,)
    return a, z, (t, a)


def attention_backward(dz: np.ndarray, da_extra: np.ndarray | None,
                       H: np.ndarray, V: np.ndarray, w: np.ndarray, cache):
    """Backprop through attention pooling.

    ``dz`` is the upstream gradient on the pooled vector; ``da_extra`` is
    any additional gradient applied directly to the weights (e.g. from the
    adjacent-weight penalty). Returns (dH, dV, dw).
    """
    t, a = cache
    dH = a[:, None] * dz[None, :]
    da = H @ dz
    if da_extra is not None:
        da = da + da_extra
    de = a * (da - float(a @ da))  # softmax Jacobian
    dw = t.T @ de
    dt = de[:, None] * w[None, :]
    dpre = dt * (1.0 - t * t)
    dV = dpre.T @ H
    dH = dH + dpre @ V
    return dH, dV, dw
