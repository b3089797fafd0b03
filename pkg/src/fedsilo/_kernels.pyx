# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: 3x3 patch extraction and 2x2 max pooling.

Contracts mirror ``_kernels_py`` exactly (layout, tie breaking), so the
two backends are interchangeable at import time.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def _im2col3x3_impl(real[:, :, :, ::1] xp, real[:, ::1] cols,
                    Py_ssize_t h, Py_ssize_t w):
    # xp is the zero-padded input (N, C, H+2, W+2); cols is (C*9, N*H*W).
    # For a fixed (ch, kh, kw) both the read span xp[i, ch, hh+kh, kw:kw+w]
    # and the write span cols[row, ...] are contiguous, so the loop runs at
    # copy speed; reading from the padded copy also avoids power-of-two
    # image strides that alias in cache
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t i, ch, hh, ww, kh, kw, row, base
    with nogil:
        for ch in range(c):
            for kh in range(3):
                for kw in range(3):
                    row = ch * 9 + kh * 3 + kw
                    for i in range(n):
                        for hh in range(h):
                            base = (i * h + hh) * w
                            for ww in range(w):
                                cols[row, base + ww] = xp[i, ch, hh + kh, ww + kw]


def im2col3x3(x):
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((c * 9, n * h * w), dtype=x.dtype)
    _im2col3x3_impl(xp, cols, h, w)
    return cols


def _maxpool2_forward_impl(real[:, :, :, ::1] x, real[:, :, :, ::1] y,
                           signed char[:, :, :, ::1] idx):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    cdef Py_ssize_t i, ch, hh, ww, k, kh, kw
    cdef real best, v
    cdef signed char bi
    with nogil:
        for i in range(n):
            for ch in range(c):
                for hh in range(h2):
                    for ww in range(w2):
                        best = x[i, ch, 2 * hh, 2 * ww]
                        bi = 0
                        for k in range(1, 4):
                            kh = k >> 1
                            kw = k & 1
                            v = x[i, ch, 2 * hh + kh, 2 * ww + kw]
                            if v > best:
                                best = v
                                bi = <signed char> k
                        y[i, ch, hh, ww] = best
                        idx[i, ch, hh, ww] = bi


def maxpool2_forward(x):
    n, c, h, w = x.shape
    x = np.ascontiguousarray(x)
    y = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty((n, c, h // 2, w // 2), dtype=np.int8)
    _maxpool2_forward_impl(x, y, idx)
    return y, idx


def _maxpool2_backward_impl(real[:, :, :, ::1] dy, signed char[:, :, :, ::1] idx,
                            real[:, :, :, ::1] dx):
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], h2 = dy.shape[2], w2 = dy.shape[3]
    cdef Py_ssize_t i, ch, hh, ww
    cdef signed char k
    with nogil:
        for i in range(n):
            for ch in range(c):
                for hh in range(h2):
                    for ww in range(w2):
                        k = idx[i, ch, hh, ww]
                        dx[i, ch, 2 * hh + (k >> 1), 2 * ww + (k & 1)] = dy[i, ch, hh, ww]


def maxpool2_backward(dy, idx, h, w):
    n, c = dy.shape[0], dy.shape[1]
    dy = np.ascontiguousarray(dy)
    idx = np.ascontiguousarray(idx)
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    _maxpool2_backward_impl(dy, idx, dx)
    return dx
