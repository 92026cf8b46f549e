# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-participant reduction kernels.

Same signatures and results as ``_pykernels``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def cluster_scores(X, weight, resid, starts):
    """Per-participant score sums ``U_i = sum_t weight_t resid_t X_t``."""
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weight, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(resid, dtype=np.float64)
    cdef const cnp.intp_t[::1] s = np.ascontiguousarray(starts, dtype=np.intp)
    cdef Py_ssize_t n = s.shape[0], N = x.shape[0], q = x.shape[1]
    out_arr = np.zeros((n, q))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, t, j, stop
    cdef double c
    for i in range(n):
        stop = s[i + 1] if i + 1 < n else N
        for t in range(s[i], stop):
            c = w[t] * r[t]
            if c == 0.0:
                continue
            for j in range(q):
                out[i, j] += c * x[t, j]
    return out_arr


def cluster_grams(X, weight, starts):
    """Per-participant weighted Gram matrices ``G_i = sum_t weight_t X_t X_t^T``."""
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weight, dtype=np.float64)
    cdef const cnp.intp_t[::1] s = np.ascontiguousarray(starts, dtype=np.intp)
    cdef Py_ssize_t n = s.shape[0], N = x.shape[0], q = x.shape[1]
    out_arr = np.zeros((n, q, q))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, t, j, k, stop
    cdef double c
    for i in range(n):
        stop = s[i + 1] if i + 1 < n else N
        for t in range(s[i], stop):
            c = w[t]
            if c == 0.0:
                continue
            for j in range(q):
                for k in range(j + 1):
                    out[i, j, k] += c * x[t, j] * x[t, k]
        for j in range(q):
            for k in range(j):
                out[i, k, j] = out[i, j, k]
    return out_arr


def ar1_recursion(intercept, double coef, y0, shocks):
    """Run ``y[:, t+1] = intercept[:, t] + coef * y[:, t] + shocks[:, t]``."""
    cdef const double[:, ::1] a = np.ascontiguousarray(intercept, dtype=np.float64)
    cdef const double[:, ::1] e = np.ascontiguousarray(shocks, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], T = a.shape[1]
    out_arr = np.empty((n, T + 1))
    out_arr[:, 0] = y0
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, t
    for i in range(n):
        for t in range(T):
            out[i, t + 1] = a[i, t] + coef * out[i, t] + e[i, t]
    return out_arr
