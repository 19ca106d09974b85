# cython: language_level=3
"""Compiled exact 1-D TV denoising kernel."""

import numpy as np


cdef void _scan(const double[::1] y, double[::1] x, double lam) noexcept nogil:
    cdef Py_ssize_t n = y.shape[0]
    cdef double mlam = -lam
    cdef double twolam = 2.0 * lam
    cdef Py_ssize_t k = 0, k0 = 0, kplus = 0, kminus = 0
    cdef double umin = lam, umax = mlam
    cdef double vmin = y[0] - lam, vmax = y[0] + lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while k0 <= kminus:
                    x[k0] = vmin
                    k0 += 1
                k = k0
                kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while k0 <= kplus:
                    x[k0] = vmax
                    k0 += 1
                k = k0
                kplus = k0
                vmax = y[k0]
                umax = mlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while k0 <= k:
                    x[k0] = vmin
                    k0 += 1
                return
        umin += y[k + 1] - vmin
        if umin < mlam:
            while k0 <= kminus:
                x[k0] = vmin
                k0 += 1
            k = k0
            kminus = k0
            kplus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = mlam
            continue
        umax += y[k + 1] - vmax
        if umax > lam:
            while k0 <= kplus:
                x[k0] = vmax
                k0 += 1
            k = k0
            kminus = k0
            kplus = k0
            vmax = y[k0]
            vmin = vmax - twolam
            umin = lam
            umax = mlam
            continue
        k += 1
        if umin >= lam:
            kminus = k
            vmin += (umin - lam) / (kminus - k0 + 1)
            umin = lam
        if umax <= mlam:
            kplus = k
            vmax += (umax + lam) / (kplus - k0 + 1)
            umax = mlam


def tv1d_denoise(const double[::1] y, double weight):
    """Minimize 0.5*sum((y - x)**2) + weight*sum(|x[k+1] - x[k]|) exactly.

    Same scan as ``_fallback.tv1d_denoise``; returns a new float64 array.
    """
    out = np.empty(y.shape[0], dtype=np.float64)
    cdef double[::1] x = out
    if y.shape[0]:
        with nogil:
            _scan(y, x, weight)
    return out
