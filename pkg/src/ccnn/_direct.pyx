# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled direct-convolution loops (the quadratic reference path).

Same API and alignment conventions as ``ccnn._direct_np``:
1D kernels are in grid order (last tap weights the current position,
causal zero padding on the left); 2D kernels have odd extents and are
centered.  Forward only — gradients go through the FFT path.
"""

import numpy as np

cimport cython


ctypedef fused real:
    float
    double


cdef inline real _dot(const real* a, const real* b, Py_ssize_t n) noexcept nogil:
    # eight independent accumulator chains so the FP adds pipeline
    cdef real s0 = 0, s1 = 0, s2 = 0, s3 = 0
    cdef real s4 = 0, s5 = 0, s6 = 0, s7 = 0
    cdef Py_ssize_t j = 0
    while j + 8 <= n:
        s0 = s0 + a[j] * b[j]
        s1 = s1 + a[j + 1] * b[j + 1]
        s2 = s2 + a[j + 2] * b[j + 2]
        s3 = s3 + a[j + 3] * b[j + 3]
        s4 = s4 + a[j + 4] * b[j + 4]
        s5 = s5 + a[j + 5] * b[j + 5]
        s6 = s6 + a[j + 6] * b[j + 6]
        s7 = s7 + a[j + 7] * b[j + 7]
        j += 8
    while j < n:
        s0 = s0 + a[j] * b[j]
        j += 1
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))


def _loop1d_full(real[:, :, ::1] xp, real[:, :, ::1] k, real[:, :, ::1] out):
    cdef Py_ssize_t B = out.shape[0], O = out.shape[1], L = out.shape[2]
    cdef Py_ssize_t C = k.shape[1], Lk = k.shape[2]
    cdef Py_ssize_t b, o, c, t
    cdef real acc
    for b in range(B):
        for o in range(O):
            for t in range(L):
                acc = 0
                for c in range(C):
                    acc = acc + _dot(&k[o, c, 0], &xp[b, c, t], Lk)
                out[b, o, t] = acc


def _loop1d_depthwise(real[:, :, ::1] xp, real[:, ::1] k, real[:, :, ::1] out):
    cdef Py_ssize_t B = out.shape[0], C = out.shape[1], L = out.shape[2]
    cdef Py_ssize_t Lk = k.shape[1]
    cdef Py_ssize_t b, c, t
    for b in range(B):
        for c in range(C):
            for t in range(L):
                out[b, c, t] = _dot(&k[c, 0], &xp[b, c, t], Lk)


def _loop2d_full(real[:, :, :, ::1] xp, real[:, :, :, ::1] k,
                 real[:, :, :, ::1] out):
    cdef Py_ssize_t B = out.shape[0], O = out.shape[1]
    cdef Py_ssize_t H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t C = k.shape[1], Hk = k.shape[2], Wk = k.shape[3]
    cdef Py_ssize_t b, o, c, u, v, p, q
    cdef real acc
    for b in range(B):
        for o in range(O):
            for u in range(H):
                for v in range(W):
                    acc = 0
                    for c in range(C):
                        for p in range(Hk):
                            for q in range(Wk):
                                acc = acc + k[o, c, p, q] * xp[b, c, u + p, v + q]
                    out[b, o, u, v] = acc


def _loop2d_depthwise(real[:, :, :, ::1] xp, real[:, :, ::1] k,
                      real[:, :, :, ::1] out):
    cdef Py_ssize_t B = out.shape[0], C = out.shape[1]
    cdef Py_ssize_t H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t Hk = k.shape[1], Wk = k.shape[2]
    cdef Py_ssize_t b, c, u, v, p, q
    cdef real acc
    for b in range(B):
        for c in range(C):
            for u in range(H):
                for v in range(W):
                    acc = 0
                    for p in range(Hk):
                        for q in range(Wk):
                            acc = acc + k[c, p, q] * xp[b, c, u + p, v + q]
                    out[b, c, u, v] = acc


def conv1d_full(x, k):
    B, C, L = x.shape
    O, _, Lk = k.shape
    xp = np.ascontiguousarray(
        np.pad(x, ((0, 0), (0, 0), (Lk - 1, 0))))
    out = np.empty((B, O, L), dtype=x.dtype)
    _loop1d_full(xp, np.ascontiguousarray(k), out)
    return out


def conv1d_depthwise(x, k):
    B, C, L = x.shape
    Lk = k.shape[1]
    xp = np.ascontiguousarray(
        np.pad(x, ((0, 0), (0, 0), (Lk - 1, 0))))
    out = np.empty((B, C, L), dtype=x.dtype)
    _loop1d_depthwise(xp, np.ascontiguousarray(k), out)
    return out


def conv2d_full(x, k):
    B, C, H, W = x.shape
    O, _, Hk, Wk = k.shape
    ch, cw = (Hk - 1) // 2, (Wk - 1) // 2
    xp = np.ascontiguousarray(
        np.pad(x, ((0, 0), (0, 0), (ch, ch), (cw, cw))))
    out = np.empty((B, O, H, W), dtype=x.dtype)
    _loop2d_full(xp, np.ascontiguousarray(k), out)
    return out


def conv2d_depthwise(x, k):
    B, C, H, W = x.shape
    Hk, Wk = k.shape[1], k.shape[2]
    ch, cw = (Hk - 1) // 2, (Wk - 1) // 2
    xp = np.ascontiguousarray(
        np.pad(x, ((0, 0), (0, 0), (ch, ch), (cw, cw))))
    out = np.empty((B, C, H, W), dtype=x.dtype)
    _loop2d_depthwise(xp, np.ascontiguousarray(k), out)
    return out
