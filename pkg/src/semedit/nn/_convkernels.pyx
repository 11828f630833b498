# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col/col2im kernels (OpenMP over the batch axis).

Same contracts as semedit.nn.kernels_numpy; selected at import by
semedit.nn.kernels when the extension built successfully.  Callers must pass
C-contiguous float32/float64 arrays.
"""

import numpy as np

from cython.parallel cimport prange

ctypedef fused floating:
    float
    double


def im2col(const floating[:, :, :, ::1] xp, int kh, int kw, int sh, int sw):
    cdef int n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef int oh = (hp - kh) // sh + 1
    cdef int ow = (wp - kw) // sw + 1
    cdef int row_len = kh * kw * c
    out_arr = np.empty((n * oh * ow, row_len),
                       dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, i, j, k, r, base
    with nogil:
        for b in prange(n, schedule='static'):
            for oy in range(oh):
                for ox in range(ow):
                    r = (b * oh + oy) * ow + ox
                    base = 0
                    for i in range(kh):
                        for j in range(kw):
                            for k in range(c):
                                out[r, base + k] = xp[b, oy * sh + i, ox * sw + j, k]
                            base = base + c
    return out_arr


def col2im(const floating[:, ::1] cols, int n, int hp, int wp, int c,
           int kh, int kw, int sh, int sw):
    cdef int oh = (hp - kh) // sh + 1
    cdef int ow = (wp - kw) // sw + 1
    xp_arr = np.zeros((n, hp, wp, c),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] xp = xp_arr
    cdef Py_ssize_t b, oy, ox, i, j, k, r, base
    # Parallel over batch only: each thread owns disjoint xp[b] slices, so the
    # scatter-add stays deterministic for any thread count.
    with nogil:
        for b in prange(n, schedule='static'):
            for oy in range(oh):
                for ox in range(ow):
                    r = (b * oh + oy) * ow + ox
                    base = 0
                    for i in range(kh):
                        for j in range(kw):
                            for k in range(c):
                                xp[b, oy * sh + i, ox * sw + j, k] += cols[r, base + k]
                            base = base + c
    return xp_arr
