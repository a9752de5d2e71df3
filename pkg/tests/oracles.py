"""Slow, obviously-correct reference implementations used only by tests."""

import itertools

import numpy as np


def same_pads(n, k, s):
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2


def naive_conv(x, w, b, stride):
    """Direct loops; x (*spatial, Cin), w (*k, Cin, Cout), same padding."""
    nd = x.ndim - 1
    ks = w.shape[:nd]
    cin, cout = w.shape[nd], w.shape[nd + 1]
    outs, lows = zip(*(same_pads(n, k, stride) for n, k in zip(x.shape[:nd], ks)))
    y = np.zeros(tuple(outs) + (cout,))
    for opos in itertools.product(*(range(o) for o in outs)):
        for koff in itertools.product(*(range(k) for k in ks)):
            ipos = tuple(o * stride + k - lo for o, k, lo in zip(opos, koff, lows))
            if any(i < 0 or i >= n for i, n in zip(ipos, x.shape[:nd])):
                continue
            for ci in range(cin):
                for co in range(cout):
                    y[opos + (co,)] += x[ipos + (ci,)] * w[koff + (ci, co)]
    if b is not None:
        y += b
    return y


def naive_conv_transpose(x, w, b, stride):
    """Scatter definition: each input voxel stamps the kernel into the output."""
    nd = x.ndim - 1
    ks = w.shape[:nd]
    cin, cout = w.shape[nd], w.shape[nd + 1]
    outs = tuple(n * stride for n in x.shape[:nd])
    lows = [same_pads(o, k, stride)[1] for o, k in zip(outs, ks)]
    y = np.zeros(outs + (cout,))
    for ipos in itertools.product(*(range(n) for n in x.shape[:nd])):
        for koff in itertools.product(*(range(k) for k in ks)):
            opos = tuple(i * stride + k - lo for i, k, lo in zip(ipos, koff, lows))
            if any(o < 0 or o >= n for o, n in zip(opos, outs)):
                continue
            for ci in range(cin):
                for co in range(cout):
                    y[opos + (co,)] += x[ipos + (ci,)] * w[koff + (ci, co)]
    if b is not None:
        y += b
    return y


def naive_trilinear(grid, p, c):
    """Sum over the 8 corners with explicit weights; out-of-range corners are 0."""
    total = 0.0
    h0, w0, d0 = (int(np.floor(v)) for v in p)
    for dh in (0, 1):
        for dw in (0, 1):
            for dd in (0, 1):
                ih, iw, id_ = h0 + dh, w0 + dw, d0 + dd
                wt = ((1 - abs(p[0] - ih)) * (1 - abs(p[1] - iw)) * (1 - abs(p[2] - id_)))
                if 0 <= ih < grid.shape[0] and 0 <= iw < grid.shape[1] and 0 <= id_ < grid.shape[2]:
                    total += wt * grid[ih, iw, id_, c]
    return total
