# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_kernels_py`` operation for operation."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"


def im2col3x3(double[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    out = np.empty((b * h * w, 9 * c), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t n, i, j, ky, kx, ch, yy, xx, row, col
    with nogil:
        for n in range(b):
            for i in range(h):
                for j in range(w):
                    row = (n * h + i) * w + j
                    col = 0
                    for ky in range(3):
                        yy = i + ky - 1
                        for kx in range(3):
                            xx = j + kx - 1
                            if yy < 0 or yy >= h or xx < 0 or xx >= w:
                                for ch in range(c):
                                    cols[row, col + ch] = 0.0
                            else:
                                for ch in range(c):
                                    cols[row, col + ch] = x[n, yy, xx, ch]
                            col += c
    return out


def col2im3x3(cols_in, shape):
    cdef Py_ssize_t b = shape[0], h = shape[1], w = shape[2], c = shape[3]
    cdef double[:, ::1] cols = np.ascontiguousarray(cols_in, dtype=np.float64).reshape(b * h * w, 9 * c)
    out = np.zeros((b, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t n, i, j, ky, kx, ch, si, sj, row, col
    # Gather form of the scatter-add: each output element sums its
    # contributions in (ky, kx) order, the same order as the numpy path.
    with nogil:
        for n in range(b):
            for i in range(h):
                for j in range(w):
                    for ky in range(3):
                        si = i + 1 - ky
                        if si < 0 or si >= h:
                            continue
                        for kx in range(3):
                            sj = j + 1 - kx
                            if sj < 0 or sj >= w:
                                continue
                            row = (n * h + si) * w + sj
                            col = (ky * 3 + kx) * c
                            for ch in range(c):
                                dx[n, i, j, ch] += cols[row, col + ch]
    return out


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], h2 = x.shape[1] // 2, w2 = x.shape[2] // 2, c = x.shape[3]
    out_arr = np.empty((b, h2, w2, c), dtype=np.float64)
    idx_arr = np.zeros((b, h2, w2, c), dtype=np.uint8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, i, j, ch, dy, dx
    cdef double v
    # Window positions in raster order; strict > keeps the first maximum.
    with nogil:
        for n in range(b):
            for i in range(h2):
                for j in range(w2):
                    for ch in range(c):
                        out[n, i, j, ch] = x[n, 2 * i, 2 * j, ch]
                    for dy in range(2):
                        for dx in range(2):
                            if dy == 0 and dx == 0:
                                continue
                            for ch in range(c):
                                v = x[n, 2 * i + dy, 2 * j + dx, ch]
                                if v > out[n, i, j, ch]:
                                    out[n, i, j, ch] = v
                                    idx[n, i, j, ch] = <unsigned char>(dy * 2 + dx)
    return out_arr, idx_arr


def maxpool2_backward(double[:, :, :, ::1] dout, unsigned char[:, :, :, ::1] idx):
    cdef Py_ssize_t b = dout.shape[0], h2 = dout.shape[1], w2 = dout.shape[2], c = dout.shape[3]
    dx_arr = np.zeros((b, 2 * h2, 2 * w2, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, i, j, ch
    cdef unsigned char a
    with nogil:
        for n in range(b):
            for i in range(h2):
                for j in range(w2):
                    for ch in range(c):
                        a = idx[n, i, j, ch]
                        dx[n, 2 * i + a // 2, 2 * j + a % 2, ch] = dout[n, i, j, ch]
    return dx_arr


def conv1d_edge(img, weights, int axis):
    cdef double[:, :, ::1] x = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[::1] wt = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t r = (wt.shape[0] - 1) // 2
    out_arr = np.empty((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, ch, k, lo, hi, n
    cdef double acc
    n = h if axis == 0 else w
    with nogil:
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    acc = wt[r] * x[i, j, ch]
                    for k in range(1, r + 1):
                        if axis == 0:
                            lo = i - k
                            hi = i + k
                        else:
                            lo = j - k
                            hi = j + k
                        if lo < 0:
                            lo = 0
                        if hi > n - 1:
                            hi = n - 1
                        if axis == 0:
                            acc = acc + wt[r + k] * (x[lo, j, ch] + x[hi, j, ch])
                        else:
                            acc = acc + wt[r + k] * (x[i, lo, ch] + x[i, hi, ch])
                    out[i, j, ch] = acc
    return out_arr


def iou_matrix(a_in, b_in):
    cdef double[:, ::1] a = np.ascontiguousarray(a_in, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] b = np.ascontiguousarray(b_in, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    res = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = res
    cdef double iw, ih, inter, area_a, area_b, lo, hi
    with nogil:
        for i in range(n):
            area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
            for j in range(m):
                hi = a[i, 2] if a[i, 2] < b[j, 2] else b[j, 2]
                lo = a[i, 0] if a[i, 0] > b[j, 0] else b[j, 0]
                iw = hi - lo
                hi = a[i, 3] if a[i, 3] < b[j, 3] else b[j, 3]
                lo = a[i, 1] if a[i, 1] > b[j, 1] else b[j, 1]
                ih = hi - lo
                if iw < 0.0:
                    iw = 0.0
                if ih < 0.0:
                    ih = 0.0
                inter = iw * ih
                area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
                out[i, j] = inter / (area_a + area_b - inter)
    return res
