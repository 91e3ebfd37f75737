# cython: language_level=3
"""Compiled row-wise kernels. Mirrors ``_kernels_py`` call for call."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

BACKEND = "cython"


def softmax_rows(const double[:, ::1] x, double T):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double mx, s, inv_t = 1.0 / T
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, c):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(c):
            out[i, j] = exp((x[i, j] - mx) * inv_t)
            s += out[i, j]
        for j in range(c):
            out[i, j] = out[i, j] / s
    return out_arr


def softmax_rows_backward(const double[:, ::1] s, const double[:, ::1] g, double T):
    cdef Py_ssize_t n = s.shape[0], c = s.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(c):
            dot += g[i, j] * s[i, j]
        for j in range(c):
            out[i, j] = s[i, j] * (g[i, j] - dot) / T
    return out_arr


def l2_normalize_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] norms = norms_arr
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j] * x[i, j]
        s = sqrt(s)
        norms[i] = s
        if s > 0.0:
            for j in range(d):
                out[i, j] = x[i, j] / s
        else:
            for j in range(d):
                out[i, j] = 0.0
    return out_arr, norms_arr


def l2_normalize_rows_backward(const double[:, ::1] y, const double[::1] norms,
                               const double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += g[i, j] * y[i, j]
        for j in range(d):
            out[i, j] = (g[i, j] - y[i, j] * dot) / norms[i]
    return out_arr


def cross_entropy_rows(const double[:, ::1] t, const double[:, ::1] p, double eps):
    cdef Py_ssize_t n = t.shape[0], c = t.shape[1], i, j
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double s, q
    for i in range(n):
        s = 0.0
        for j in range(c):
            q = p[i, j]
            if q < eps:
                q = eps
            s -= t[i, j] * log(q)
        out[i] = s
    return out_arr


def cross_entropy_rows_backward(const double[:, ::1] t, const double[:, ::1] p,
                                const double[::1] g, double eps):
    cdef Py_ssize_t n = t.shape[0], c = t.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(c):
            if p[i, j] >= eps:
                out[i, j] = -g[i] * t[i, j] / p[i, j]
            else:
                out[i, j] = 0.0
    return out_arr


def lerp_(double[::1] dst, const double[::1] src, double m):
    """In place ``dst = m * dst + (1 - m) * src``."""
    cdef Py_ssize_t n = dst.shape[0], i
    cdef double w = 1.0 - m
    for i in range(n):
        dst[i] = m * dst[i] + w * src[i]


def bin_stats(const double[::1] conf, const double[::1] correct, Py_ssize_t M):
    cdef Py_ssize_t n = conf.shape[0], i, b
    counts_arr = np.zeros(M, dtype=np.int64)
    conf_arr = np.zeros(M, dtype=np.float64)
    acc_arr = np.zeros(M, dtype=np.float64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef double[::1] csum = conf_arr
    cdef double[::1] asum = acc_arr
    for i in range(n):
        b = <Py_ssize_t>(conf[i] * M)
        if b >= M:
            b = M - 1
        if b < 0:
            b = 0
        counts[b] += 1
        csum[b] += conf[i]
        asum[b] += correct[i]
    return counts_arr, conf_arr, acc_arr


def sgd_update_(double[::1] p, double[::1] v, const double[::1] g,
                double lr, double momentum, double wd):
    """In place ``v = momentum * v + (g + wd * p)``, ``p = p - lr * v``."""
    cdef Py_ssize_t n = p.shape[0], i
    cdef double vi
    for i in range(n):
        vi = momentum * v[i] + (g[i] + wd * p[i])
        v[i] = vi
        p[i] = p[i] - lr * vi
