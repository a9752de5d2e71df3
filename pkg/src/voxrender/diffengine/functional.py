"""Activations, dense layers, dropout, losses and trilinear sampling."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_node
from .ops import _unbroadcast

BCE_EPS = 1e-7


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """x if x > 0 else slope * x; ``slope`` broadcasts over the last axis."""
    pos = x.data > 0
    out = np.where(pos, x.data, slope.data * x.data)

    def bw(g):
        gx = np.where(pos, g, g * slope.data)
        gs = _unbroadcast(np.where(pos, 0.0, g * x.data), slope.shape)
        return gx, gs

    return make_node(out.astype(x.dtype, copy=False), (x, slope), bw)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    pos = x.data > 0
    out = np.where(pos, x.data, neg)
    return make_node(out, (x,), lambda g: (np.where(pos, g, g * (neg + alpha)),))


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W + b with W shaped (in, out); x is (in,) or (N, in)."""
    if x.shape[-1] != weights.shape[0]:
        raise ValueError(f"fully_connected: input width {x.shape[-1]} != weight rows {weights.shape[0]}")
    out = x @ weights
    return out if bias is None else out + bias


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with prob p, scale survivors by 1/(1-p)."""
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout probability must be < 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,))


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)
    return make_node(out, (pred, target),
                     lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))


def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross entropy; predictions clamped to [eps, 1 - eps]."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"bce shape mismatch {pred.shape} vs {target.shape}")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)
    y = target.data
    n = p.size
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n

    def bw(g):
        gp = g * (p - y) / (p * (1.0 - p)) / n * inside
        gy = g * (np.log1p(-p) - np.log(p)) / n
        return gp, gy

    return make_node(np.asarray(out, dtype=pred.dtype), (pred, target), bw)


def grid_sample3d(volume: Tensor, coords: Tensor) -> Tensor:
    """Trilinear samples of ``volume`` at continuous index coordinates.

    volume: (H, W, D, C) or (B, H, W, D, C); coords: (..., 3) or (B, ..., 3)
    in voxel-index units (voxel centres at integers).  Corners outside the
    grid contribute zero.  Differentiable in both the volume and the coords.
    """
    batched = volume.ndim == 5
    vol = volume.data if batched else volume.data[None]
    cd = coords.data if batched else coords.data[None]
    b, h, w, d, c = vol.shape
    pts_shape = cd.shape[1:-1]
    pts = cd.reshape(b, -1, 3)
    m = pts.shape[1]
    base = np.floor(pts)
    frac = pts - base
    i0 = base.astype(np.int64)
    flat_vol = vol.reshape(b * h * w * d, c)
    bidx = (np.arange(b) * (h * w * d))[:, None]

    out = np.zeros((b, m, c), dtype=vol.dtype)
    corners = []
    for dh in (0, 1):
        for dw in (0, 1):
            for dd in (0, 1):
                ih, iw, id_ = i0[..., 0] + dh, i0[..., 1] + dw, i0[..., 2] + dd
                valid = (ih >= 0) & (ih < h) & (iw >= 0) & (iw < w) & (id_ >= 0) & (id_ < d)
                lin = np.where(valid, (ih * w + iw) * d + id_, 0) + bidx
                fh = frac[..., 0] if dh else 1.0 - frac[..., 0]
                fw = frac[..., 1] if dw else 1.0 - frac[..., 1]
                fd = frac[..., 2] if dd else 1.0 - frac[..., 2]
                wgt = fh * fw * fd * valid
                vals = flat_vol[lin] * valid[..., None]
                out += wgt[..., None] * vals
                corners.append((dh, dw, dd, lin, valid, vals))
    result = out.reshape((b,) + pts_shape + (c,))
    if not batched:
        result = result[0]

    def bw(g):
        g = (g if batched else g[None]).reshape(b, m, c)
        gvol = gpts = None
        if volume.requires_grad:
            acc = np.zeros((b * h * w * d, c), dtype=np.float64)
        if coords.requires_grad:
            gpts = np.zeros((b, m, 3), dtype=vol.dtype)
        for dh, dw, dd, lin, valid, vals in corners:
            fh = frac[..., 0] if dh else 1.0 - frac[..., 0]
            fw = frac[..., 1] if dw else 1.0 - frac[..., 1]
            fd = frac[..., 2] if dd else 1.0 - frac[..., 2]
            if volume.requires_grad:
                wgt = (fh * fw * fd * valid).ravel()
                gw = g.reshape(-1, c) * wgt[:, None]
                flat_lin = lin.ravel()
                for ch in range(c):
                    acc[:, ch] += np.bincount(flat_lin, weights=gw[:, ch], minlength=b * h * w * d)
            if coords.requires_grad:
                gv = (g * vals).sum(axis=-1)
                sh = 1.0 if dh else -1.0
                sw = 1.0 if dw else -1.0
                sd = 1.0 if dd else -1.0
                gpts[..., 0] += gv * sh * fw * fd
                gpts[..., 1] += gv * fh * sw * fd
                gpts[..., 2] += gv * fh * fw * sd
        if volume.requires_grad:
            gvol = acc.astype(vol.dtype).reshape(vol.shape)
            gvol = gvol if batched else gvol[0]
        if gpts is not None:
            gpts = gpts.reshape(cd.shape)
            gpts = gpts if batched else gpts[0]
        return gvol, gpts

    return make_node(result, (volume, coords), bw)
