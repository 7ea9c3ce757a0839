# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sliding-window kernels.

Same signatures and results as the numpy versions in ``kernels.py``; every
loop runs in a fixed order so results are bit-reproducible.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col3d(const double[:, :, :, :, ::1] xp, int kt, int kh, int kw,
             int st, int sh, int sw, int to, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ksz = kt * kh * kw, L = to * ho * wo
    out_arr = np.empty((n, c * ksz, L), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, a, i, j, ot, oh, ow, row, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for a in range(kt):
                    for i in range(kh):
                        for j in range(kw):
                            row = ((ch * kt + a) * kh + i) * kw + j
                            col = 0
                            for ot in range(to):
                                for oh in range(ho):
                                    for ow in range(wo):
                                        out[b, row, col] = xp[b, ch, ot * st + a, oh * sh + i, ow * sw + j]
                                        col += 1
    return out_arr


def col2im3d(const double[:, :, ::1] cols, tuple padded_shape, int kt, int kh, int kw,
             int st, int sh, int sw, int to, int ho, int wo):
    cdef Py_ssize_t n = padded_shape[0], c = padded_shape[1]
    out_arr = np.zeros(padded_shape, dtype=np.float64)
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, a, i, j, ot, oh, ow, row, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for a in range(kt):
                    for i in range(kh):
                        for j in range(kw):
                            row = ((ch * kt + a) * kh + i) * kw + j
                            col = 0
                            for ot in range(to):
                                for oh in range(ho):
                                    for ow in range(wo):
                                        out[b, ch, ot * st + a, oh * sh + i, ow * sw + j] += cols[b, row, col]
                                        col += 1
    return out_arr


def maxpool3d_forward(const double[:, :, :, :, ::1] xp, int kt, int kh, int kw,
                      int st, int sh, int sw, int to, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    out_arr = np.empty((n, c, to, ho, wo), dtype=np.float64)
    arg_arr = np.empty((n, c, to, ho, wo), dtype=np.int64)
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef long long[:, :, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, a, i, j, ot, oh, ow, k
    cdef long long best_k
    cdef double best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ot in range(to):
                    for oh in range(ho):
                        for ow in range(wo):
                            best = xp[b, ch, ot * st, oh * sh, ow * sw]
                            best_k = 0
                            k = 0
                            for a in range(kt):
                                for i in range(kh):
                                    for j in range(kw):
                                        v = xp[b, ch, ot * st + a, oh * sh + i, ow * sw + j]
                                        # strict '>' keeps the first maximum in scan order
                                        if v > best:
                                            best = v
                                            best_k = k
                                        k += 1
                            out[b, ch, ot, oh, ow] = best
                            arg[b, ch, ot, oh, ow] = best_k
    return out_arr, arg_arr


def maxpool3d_backward(const double[:, :, :, :, ::1] g, const long long[:, :, :, :, ::1] arg,
                       tuple padded_shape, int kt, int kh, int kw, int st, int sh, int sw):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t to = g.shape[2], ho = g.shape[3], wo = g.shape[4]
    out_arr = np.zeros(padded_shape, dtype=np.float64)
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, ot, oh, ow, k, a, i, j
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ot in range(to):
                    for oh in range(ho):
                        for ow in range(wo):
                            k = arg[b, ch, ot, oh, ow]
                            a = k // (kh * kw)
                            i = (k // kw) % kh
                            j = k % kw
                            out[b, ch, ot * st + a, oh * sh + i, ow * sw + j] += g[b, ch, ot, oh, ow]
    return out_arr
