"""Neural-network layers as differentiable functions of explicit weights."""

from __future__ import annotations

import math

import numpy as np

from .ops import DimensionError, silu, swish  # noqa: F401  (re-exported)
from .tensor import Tensor, as_tensor, record

__all__ = [
    "linear", "conv1d", "conv3d", "conv_output_size", "group_norm", "layer_norm",
    "embedding", "timestep_embedding", "silu", "swish",
]


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``.

    Parameters
    ----------
    x : Tensor, shape (..., in)
    w : Tensor, shape (in, out)
    b : Tensor, shape (out,), optional
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias shape {b.shape} does not match weight shape {w.shape}")
        out = out + b.data
    wd = w.data

    def back(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return record("linear", inputs, out.reshape(*lead, wd.shape[1]), back)


def conv1d(x, kernel, bias=None, causal: bool = True) -> Tensor:
    """Depthwise 1-D convolution along the last axis.

    ``x`` has shape ``(..., C, L)`` and ``kernel`` shape ``(C, width)``.  In
    causal mode the input is left-padded with ``width - 1`` zeros so output
    position ``t`` only sees inputs ``<= t``; otherwise padding is split to
    keep the sequence centred.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 2 or kernel.shape[1] < 1:
        raise ValueError(f"conv1d: kernel width must be positive, got kernel shape {kernel.shape}")
    C, width = kernel.shape
    if x.ndim < 2 or x.shape[-2] != C:
        raise DimensionError(f"conv1d: input shape {x.shape} has no channel axis of size {C}")
    L = x.shape[-1]
    left = width - 1 if causal else (width - 1) // 2
    right = width - 1 - left
    pad = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    xp = np.pad(x.data, pad)
    k = kernel.data
    out = np.zeros(x.shape)
    for j in range(width):
        out += k[:, j, None] * xp[..., j:j + L]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
    red = tuple(range(x.ndim - 2))

    def back(g):
        gxp = np.zeros(xp.shape)
        gk = np.empty_like(k)
        for j in range(width):
            gxp[..., j:j + L] += k[:, j, None] * g
            gk[:, j] = (g * xp[..., j:j + L]).sum(axis=red + (x.ndim - 1,))
        gx = gxp[..., left:left + L]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=red + (x.ndim - 1,))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv1d", inputs, out, back)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ValueError(
            f"conv3d: output extent ({size} + 2*{padding} - {kernel})/{stride} + 1 is not integral"
        )
    return span // stride + 1


def conv3d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """3-D cross-correlation.

    Parameters
    ----------
    x : Tensor, shape (C, D, H, W) or (B, C, D, H, W)
    w : Tensor, shape (C_out, C, k, k, k)
    b : Tensor, shape (C_out,), optional
    """
    x, w = as_tensor(x), as_tensor(w)
    unbatched = x.ndim == 4
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 5 or w.ndim != 5 or w.shape[1] != xd.shape[1]:
        raise DimensionError(f"conv3d: input shape {x.shape} incompatible with weight shape {w.shape}")
    B, C = xd.shape[:2]
    Co, _, kd, kh, kw = w.shape
    outs = [conv_output_size(n, k, stride, padding) for n, k in zip(xd.shape[2:], (kd, kh, kw))]
    P = outs[0] * outs[1] * outs[2]
    # channel-major layout; im2col gathers every kernel tap so the layer is one GEMM
    xc = np.ascontiguousarray(xd.transpose(1, 0, 2, 3, 4))
    if padding:
        xc = np.pad(xc, [(0, 0), (0, 0)] + [(padding, padding)] * 3)
    wd = w.data
    taps = [(i, j, l) for i in range(kd) for j in range(kh) for l in range(kw)]
    K = len(taps)

    def window(arr, i, j, l):
        return arr[:, :, i:i + stride * (outs[0] - 1) + 1:stride,
                   j:j + stride * (outs[1] - 1) + 1:stride,
                   l:l + stride * (outs[2] - 1) + 1:stride]

    cols = np.empty((C, K, B, *outs))
    for n, (i, j, l) in enumerate(taps):
        cols[:, n] = window(xc, i, j, l)
    cols = cols.reshape(C * K, B * P)
    w2 = wd.reshape(Co, C * K)
    acc = w2 @ cols
    if b is not None:
        b = as_tensor(b)
        acc += b.data[:, None]
    out = acc.reshape(Co, B, *outs).transpose(1, 0, 2, 3, 4)
    if unbatched:
        out = out[0]
    need_x = x.requires_grad

    def back(g):
        g = g[None] if unbatched else g
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4)).reshape(Co, B * P)
        gw = (gt @ cols.T).reshape(wd.shape)
        gx = None
        if need_x:
            gcols = (w2.T @ gt).reshape(C, K, B, *outs)
            gxc = np.zeros(xc.shape)
            for n, (i, j, l) in enumerate(taps):
                window(gxc, i, j, l)[...] += gcols[:, n]
            if padding:
                gxc = gxc[:, :, padding:-padding, padding:-padding, padding:-padding]
            gx = gxc.transpose(1, 0, 2, 3, 4)
            gx = gx[0] if unbatched else gx
        if b is None:
            return gx, gw
        return gx, gw, gt.sum(axis=1)

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv3d", inputs, out, back)


def _normalize(xr: np.ndarray, eps: float):
    mu = xr.mean(axis=-1, keepdims=True)
    xc = xr - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    return xc * inv, inv


def _normalize_back(gy: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return inv * (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True))


def group_norm(x, groups: int, gain=None, bias=None, eps: float = 1e-5, axis: int = 0) -> Tensor:
    """Group normalization with channels on ``axis``.

    Each group of ``C / groups`` channels (together with all trailing axes)
    is shifted to zero mean and scaled to unit variance; a zero-variance
    group maps to zero.  ``gain``/``bias`` are per-channel.
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    C = x.shape[axis]
    if groups < 1 or C % groups:
        raise ValueError(f"group_norm: {C} channels are not divisible into {groups} groups")
    pre = int(np.prod(x.shape[:axis]))
    xr = x.data.reshape(pre, groups, -1)
    y, inv = _normalize(xr, eps)
    bshape = (C,) + (1,) * (x.ndim - axis - 1)
    yv = y.reshape(x.shape)
    out = yv
    gd = bd = None
    if gain is not None:
        gain = as_tensor(gain)
        gd = gain.data.reshape(bshape)
        out = out * gd
    if bias is not None:
        bias = as_tensor(bias)
        bd = bias.data.reshape(bshape)
        out = out + bd
    red = tuple(i for i in range(x.ndim) if i != axis)

    def back(g):
        gy = g * gd if gd is not None else g
        gx = _normalize_back(gy.reshape(pre, groups, -1), y, inv).reshape(x.shape)
        res = [gx]
        if gain is not None:
            res.append((g * yv).sum(axis=red))
        if bias is not None:
            res.append(g.sum(axis=red))
        return tuple(res)

    inputs = (x,) + tuple(t for t in (gain, bias) if t is not None)
    return record("group_norm", inputs, out, back)


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply optional gain and bias."""
    x = as_tensor(x)
    y, inv = _normalize(x.data, eps)
    out = y
    if gain is not None:
        gain = as_tensor(gain)
        out = out * gain.data
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    red = tuple(range(x.ndim - 1))

    def back(g):
        gy = g * gain.data if gain is not None else g
        res = [_normalize_back(gy, y, inv)]
        if gain is not None:
            res.append((g * y).sum(axis=red))
        if bias is not None:
            res.append(g.sum(axis=red))
        return tuple(res)

    inputs = (x,) + tuple(t for t in (gain, bias) if t is not None)
    return record("layer_norm", inputs, out, back)


def embedding(table, index) -> Tensor:
    """Row lookup ``table[index]``."""
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"embedding: index out of range for table of {table.shape[0]} rows")

    def back(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, index.ravel(), g.reshape(-1, table.shape[1]))
        return (gt,)

    return record("embedding", (table,), table.data[index], back)


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of integer timesteps, shape ``(len(t), dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb
