# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics are defined by ``_kernels_py``; both must
agree bit for bit (see tests/test_kernels.py)."""

import numpy as np

from libc.math cimport ceil


def fill_polygon(const double[:, ::1] poly, Py_ssize_t width, Py_ssize_t height):
    """Even-odd scanline fill sampled at pixel centers (j + 0.5, i + 0.5)."""
    cdef Py_ssize_t n = poly.shape[0]
    out = np.zeros((height, width), dtype=np.uint8)
    xs_buf = np.empty(max(n, 1), dtype=np.float64)
    cdef unsigned char[:, ::1] o = out
    cdef double[::1] xs = xs_buf
    cdef Py_ssize_t i, k, kn, m, p, q, j, j0, j1
    cdef double y, xi, yi, xj, yj, t

    for i in range(height):
        y = i + 0.5
        m = 0
        for k in range(n):
            kn = k + 1
            if kn == n:
                kn = 0
            xi = poly[k, 0]
            yi = poly[k, 1]
            xj = poly[kn, 0]
            yj = poly[kn, 1]
            if (yi > y) != (yj > y):
                t = xi + (y - yi) * (xj - xi) / (yj - yi)
                # insertion sort; vertex counts are small
                q = m
                while q > 0 and xs[q - 1] > t:
                    xs[q] = xs[q - 1]
                    q -= 1
                xs[q] = t
                m += 1
        p = 0
        while p + 1 < m:
            j0 = <Py_ssize_t>ceil(xs[p] - 0.5)
            j1 = <Py_ssize_t>ceil(xs[p + 1] - 0.5)
            if j0 < 0:
                j0 = 0
            if j1 > width:
                j1 = width
            for j in range(j0, j1):
                o[i, j] = 1
            p += 2
    return out


def masked_box_mean(const double[:, ::1] values, const unsigned char[:, ::1] mask,
                    Py_ssize_t radius):
    """Mean over the (2r+1)^2 window restricted to ``mask``; NaN off-mask."""
    cdef Py_ssize_t h = values.shape[0]
    cdef Py_ssize_t w = values.shape[1]
    out = np.full((h, w), np.nan, dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, dy, dx, ii, jj, c
    cdef double s

    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            s = 0.0
            c = 0
            for dy in range(-radius, radius + 1):
                ii = i + dy
                if ii < 0 or ii >= h:
                    continue
                for dx in range(-radius, radius + 1):
                    jj = j + dx
                    if jj < 0 or jj >= w:
                        continue
                    if mask[ii, jj]:
                        s += values[ii, jj]
                        c += 1
            o[i, j] = s / c
    return out
