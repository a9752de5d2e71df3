"""N-dimensional convolution and transposed convolution (channels-last).

Layout: input ``(N, *spatial, C_in)``; kernel ``(*k, C_in, C_out)``.  An
unbatched input ``(*spatial, C_in)`` is accepted and returned unbatched.

"same" padding is symmetric zero padding (extra pixel on the high side when
the total is odd) chosen so a stride-s layer maps n -> ceil(n / s).  The
transposed layer is the exact adjoint of that same-padded conv, so it maps
n -> n * s.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_node


def same_padding(n: int, k: int, s: int) -> tuple[int, tuple[int, int]]:
    """Output size and (low, high) padding for a same-padded stride-s conv."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, (total // 2, total - total // 2)


def _resolve(spatial, ks, strides, padding):
    outs, pads = [], []
    for n, k, s in zip(spatial, ks, strides):
        if padding == "same":
            o, p = same_padding(n, k, s)
        else:
            if padding == "valid":
                p = (0, 0)
            elif isinstance(padding, int):
                p = (padding, padding)
            else:
                p = tuple(padding[len(pads)])
            o = (n + p[0] + p[1] - k) // s + 1
            if o < 1:
                raise ValueError(f"conv output would be empty (n={n}, k={k}, pad={p})")
        outs.append(o)
        pads.append(p)
    return tuple(outs), tuple(pads)


def _tuple(v, nd):
    return tuple(v) if isinstance(v, (tuple, list)) else (v,) * nd


def _im2col(xp: np.ndarray, ks, strides, outs) -> np.ndarray:
    """(N, *padded, C) -> (N * prod(out), prod(k) * C) in (*k, C) order."""
    nd = len(ks)
    win = sliding_window_view(xp, ks, axis=tuple(range(1, nd + 1)))
    sl = (slice(None),) + tuple(slice(0, o * s, s) for o, s in zip(outs, strides))
    win = win[sl]
    # (N, *out, C, *k) -> (N, *out, *k, C)
    perm = (0,) + tuple(range(1, nd + 1)) + tuple(range(nd + 2, 2 * nd + 2)) + (nd + 1,)
    win = win.transpose(perm)
    n = xp.shape[0]
    return np.ascontiguousarray(win).reshape(n * math.prod(outs), -1)


def _col2im(dcols: np.ndarray, padded_shape, ks, strides, outs) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back into a padded array."""
    nd = len(ks)
    n, c = padded_shape[0], padded_shape[-1]
    dcols = dcols.reshape((n,) + tuple(outs) + tuple(ks) + (c,))
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    for off in itertools.product(*(range(k) for k in ks)):
        dst = (slice(None),) + tuple(slice(o, o + s * (m - 1) + 1, s)
                                     for o, s, m in zip(off, strides, outs))
        src = (slice(None),) * (nd + 1) + off + (slice(None),)
        dxp[dst] += dcols[src]
    return dxp


def _batched(x: Tensor, nd: int) -> tuple[np.ndarray, bool]:
    if x.ndim == nd + 1:
        return x.data[None], True
    if x.ndim != nd + 2:
        raise ValueError(f"expected {nd}-D spatial input with channels, got shape {x.shape}")
    return x.data, False


def conv(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1,
         padding="same") -> Tensor:
    """Cross-correlation over the spatial axes implied by the kernel rank."""
    nd = kernel.ndim - 2
    xd, squeeze = _batched(x, nd)
    ks = kernel.shape[:nd]
    cin, cout = kernel.shape[nd], kernel.shape[nd + 1]
    if xd.shape[-1] != cin:
        raise ValueError(f"kernel expects {cin} input channels, input has {xd.shape[-1]}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    strides = _tuple(stride, nd)
    spatial = xd.shape[1:-1]
    outs, pads = _resolve(spatial, ks, strides, padding)
    xp = np.pad(xd, ((0, 0),) + pads + ((0, 0),))
    cols = _im2col(xp, ks, strides, outs)
    wm = kernel.data.reshape(-1, cout)
    out = cols @ wm
    if bias is not None:
        out += bias.data
    n = xd.shape[0]
    out = out.reshape((n,) + outs + (cout,))
    if squeeze:
        out = out[0]

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    gather_ok = x.requires_grad and all(s == 1 for s in strides) and \
        all(lo < k and hi < k for k, (lo, hi) in zip(ks, pads))
    if gather_ok:
        flip = kernel.data[tuple(slice(None, None, -1) for _ in ks)]
        wflip = np.swapaxes(flip, -1, -2).reshape(-1, cin)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gx = None
        if x.requires_grad and gather_ok:
            # stride 1: full correlation of g with the flipped kernel, a gather
            # instead of a prod(k)-way scatter
            gp = np.pad(g2.reshape((n,) + outs + (cout,)),
                        ((0, 0),) + tuple((k - 1 - lo, k - 1 - hi) for k, (lo, hi) in zip(ks, pads))
                        + ((0, 0),))
            gx = (_im2col(gp, ks, strides, spatial) @ wflip).reshape(xd.shape)
            gx = gx[0] if squeeze else gx
        elif x.requires_grad:
            dxp = _col2im(g2 @ wm.T, xp.shape, ks, strides, outs)
            gx = dxp[(slice(None),) + tuple(slice(lo, lo + m) for (lo, _), m in zip(pads, spatial))]
            gx = gx[0] if squeeze else gx
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return make_node(out, parents, bw)


def conv_transpose(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1) -> Tensor:
    """Up-convolution: adjoint of a same-padded stride-s conv; n -> n * s.

    ``kernel`` has shape ``(*k, C_in, C_out)`` where C_in is this layer's input.
    """
    nd = kernel.ndim - 2
    xd, squeeze = _batched(x, nd)
    ks = kernel.shape[:nd]
    cin, cout = kernel.shape[nd], kernel.shape[nd + 1]
    if xd.shape[-1] != cin:
        raise ValueError(f"kernel expects {cin} input channels, input has {xd.shape[-1]}")
    strides = _tuple(stride, nd)
    n_in = xd.shape[1:-1]
    outs = tuple(m * s for m, s in zip(n_in, strides))
    pads = []
    for o, k, s, m in zip(outs, ks, strides, n_in):
        m_chk, p = same_padding(o, k, s)
        assert m_chk == m
        pads.append(p)
    pads = tuple(pads)
    n = xd.shape[0]
    padded = (n,) + tuple(o + lo + hi for o, (lo, hi) in zip(outs, pads)) + (cout,)
    # adjoint conv kernel (*k, C_out, C_in) flattened to (prod(k) * C_out, C_in)
    wadj = np.swapaxes(kernel.data, -1, -2).reshape(-1, cin)
    x2 = xd.reshape(-1, cin)
    dxp = _col2im(x2 @ wadj.T, padded, ks, strides, n_in)
    crop = (slice(None),) + tuple(slice(lo, lo + o) for (lo, _), o in zip(pads, outs))
    out = np.ascontiguousarray(dxp[crop])
    if bias is not None:
        out += bias.data
    if squeeze:
        out = out[0]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gb = g if not squeeze else g[None]
        gp = np.pad(gb, ((0, 0),) + pads + ((0, 0),))
        cols = _im2col(gp, ks, strides, n_in)
        gx = (cols @ wadj).reshape(xd.shape) if x.requires_grad else None
        if gx is not None and squeeze:
            gx = gx[0]
        gk = None
        if kernel.requires_grad:
            gk = np.swapaxes((cols.T @ x2).reshape(tuple(ks) + (cout, cin)), -1, -2)
        if bias is None:
            return gx, gk
        return gx, gk, gb.reshape(-1, cout).sum(axis=0)

    return make_node(out, parents, bw)


def conv2d(x, kernel, bias=None, stride=1, padding="same") -> Tensor:
    if kernel.ndim != 4:
        raise ValueError(f"conv2d kernel must be (kh, kw, cin, cout), got {kernel.shape}")
    return conv(x, kernel, bias, stride, padding)


def conv3d(x, kernel, bias=None, stride=1, padding="same") -> Tensor:
    if kernel.ndim != 5:
        raise ValueError(f"conv3d kernel must be (kh, kw, kd, cin, cout), got {kernel.shape}")
    return conv(x, kernel, bias, stride, padding)


def conv2d_transpose(x, kernel, bias=None, stride=1) -> Tensor:
    if kernel.ndim != 4:
        raise ValueError(f"conv2d_transpose kernel must be 4-D, got {kernel.shape}")
    return conv_transpose(x, kernel, bias, stride)


def conv3d_transpose(x, kernel, bias=None, stride=1) -> Tensor:
    if kernel.ndim != 5:
        raise ValueError(f"conv3d_transpose kernel must be 5-D, got {kernel.shape}")
    return conv_transpose(x, kernel, bias, stride)
