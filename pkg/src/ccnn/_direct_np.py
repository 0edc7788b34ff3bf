"""Numpy fallback for the direct-convolution loops.

Mirrors the API of the compiled ``ccnn._direct`` module.  1D uses
``np.correlate`` per channel pair; 2D accumulates one shifted window per
kernel tap.  Quadratic cost either way — this is the reference path the
FFT implementation is benchmarked and verified against.
"""

import numpy as np


def conv1d_full(x, k):
    B, C, L = x.shape
    O, _, Lk = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (Lk - 1, 0)))
    out = np.zeros((B, O, L), dtype=x.dtype)
    for b in range(B):
        for o in range(O):
            for c in range(C):
                out[b, o] += np.correlate(xp[b, c], k[o, c], mode="valid")
    return out


def conv1d_depthwise(x, k):
    B, C, L = x.shape
    Lk = k.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (Lk - 1, 0)))
    out = np.empty((B, C, L), dtype=x.dtype)
    for b in range(B):
        for c in range(C):
            out[b, c] = np.correlate(xp[b, c], k[c], mode="valid")
    return out


def conv2d_full(x, k):
    B, C, H, W = x.shape
    O, _, Hk, Wk = k.shape
    ch, cw = (Hk - 1) // 2, (Wk - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ch, ch), (cw, cw)))
    out = np.zeros((B, O, H, W), dtype=x.dtype)
    for p in range(Hk):
        for q in range(Wk):
            out += np.einsum("oc,bchw->bohw", k[:, :, p, q],
                             xp[:, :, p:p + H, q:q + W])
    return out


def conv2d_depthwise(x, k):
    B, C, H, W = x.shape
    Hk, Wk = k.shape[1], k.shape[2]
    ch, cw = (Hk - 1) // 2, (Wk - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ch, ch), (cw, cw)))
    out = np.zeros((B, C, H, W), dtype=x.dtype)
    for p in range(Hk):
        for q in range(Wk):
            out += k[None, :, p, q, None, None] * xp[:, :, p:p + H, q:q + W]
    return out
