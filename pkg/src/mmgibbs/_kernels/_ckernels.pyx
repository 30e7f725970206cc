# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: pairwise multi-bandwidth kernel sums and batched
mixture-of-Gaussians log-density / score / Hessian."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log

cnp.import_array()


cdef inline double _ipow(double x, int n) noexcept nogil:
    cdef double r = 1.0
    if n == 4:
        x = x * x
        return x * x
    if n == 2:
        return x * x
    while n > 0:
        if n & 1:
            r = r * x
        x = x * x
        n = n >> 1
    return r


def _ladder(coef):
    """Visit order (ascending coef) and integer step powers.

    When coef[order[k]] / coef[order[k-1]] is an exact small integer the
    kernel value is the previous one raised to that power, saving an exp.
    """
    c = np.asarray(coef, dtype=np.float64)
    order = np.argsort(c, kind="stable").astype(np.intp)
    pw = np.zeros(len(c), dtype=np.intc)
    for k in range(1, len(c)):
        ratio = c[order[k]] / c[order[k - 1]]
        n = int(round(ratio))
        if 1 <= n <= 64 and abs(ratio - n) <= 1e-12 * n:
            pw[k] = n
    return order, pw


DEF MAX_BANDWIDTHS = 32


cdef void _row(const double[:, ::1] X, const double[:, ::1] Y, Py_ssize_t i, Py_ssize_t j0,
               const double[::1] coef, const Py_ssize_t[::1] order, const int[::1] pw,
               const double[::1] thr, double[:, ::1] part) noexcept nogil:
    cdef double acc[MAX_BANDWIDTHS]
    cdef Py_ssize_t K = coef.shape[0], d = X.shape[1], m = Y.shape[0]
    cdef Py_ssize_t j, k, t
    cdef double d2, diff, val, prev, x0 = X[i, 0], x1 = 0.0
    for k in range(K):
        acc[k] = 0.0
    if d == 2:
        x1 = X[i, 1]
    for j in range(j0, m):
        if d == 2:
            diff = x0 - Y[j, 0]
            d2 = diff * diff
            diff = x1 - Y[j, 1]
            d2 = d2 + diff * diff
        else:
            d2 = 0.0
            for t in range(d):
                diff = X[i, t] - Y[j, t]
                d2 = d2 + diff * diff
        prev = 1.0
        for k in range(K):
            if pw[k] == 0:
                val = exp(-coef[order[k]] * d2)
            elif prev < thr[k]:
                val = 0.0  # result would be < 1e-300; avoids denormal arithmetic
            else:
                val = _ipow(prev, pw[k])
            acc[k] = acc[k] + val
            prev = val
    for k in range(K):
        part[i, order[k]] = acc[k]


def kernel_sums(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] coef,
                bint same, int nthreads=1):
    """Sum of exp(-coef_k * ||x_i - y_j||^2) over pairs, one total per coef.

    With ``same`` the diagonal is excluded and X must equal Y; only i < j is
    visited and the result doubled. Rows are reduced into a per-row buffer and
    then summed serially so the result does not depend on thread count.
    """
    cdef Py_ssize_t n = X.shape[0], K = coef.shape[0]
    cdef Py_ssize_t i, k
    if K > MAX_BANDWIDTHS:
        raise ValueError(f"at most {MAX_BANDWIDTHS} bandwidths supported")
    if X.shape[1] != Y.shape[1]:
        raise ValueError("point sets differ in dimension")
    order_arr, pw_arr = _ladder(coef)
    cdef Py_ssize_t[::1] order = order_arr
    cdef int[::1] pw = pw_arr
    cdef double[::1] thr = np.array([10.0 ** (-300.0 / p) if p else 0.0 for p in pw_arr])
    part_arr = np.zeros((n, K), dtype=np.float64)
    cdef double[:, ::1] part = part_arr
    if nthreads < 1:
        nthreads = 1
    if n == 0 or Y.shape[0] == 0:
        return np.zeros(K, dtype=np.float64)
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        _row(X, Y, i, i + 1 if same else 0, coef, order, pw, thr, part)
    total = np.zeros(K, dtype=np.float64)
    cdef double[::1] tot = total
    for i in range(n):
        for k in range(K):
            tot[k] += part[i, k]
    if same:
        for k in range(K):
            tot[k] *= 2.0
    return total


def mog_eval(const double[:, ::1] X, const double[:, ::1] means, const double[::1] log_w,
             double var, bint want_hessian=True):
    """log p(x), grad log p(x) and Hessian of log p(x) for an isotropic mixture."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], K = means.shape[0]
    cdef Py_ssize_t i, k, a, b
    cdef double norm = -0.5 * d * log(2.0 * 3.141592653589793 * var)
    cdef double inv_var = 1.0 / var
    cdef double mx, acc, diff, r
    logp_arr = np.empty(n, dtype=np.float64)
    score_arr = np.zeros((n, d), dtype=np.float64)
    hess_arr = np.zeros((n if want_hessian else 0, d, d), dtype=np.float64)
    comp_arr = np.empty(K, dtype=np.float64)
    u_arr = np.empty((K, d), dtype=np.float64)
    cdef double[::1] logp = logp_arr
    cdef double[:, ::1] score = score_arr
    cdef double[:, :, ::1] hess = hess_arr
    cdef double[::1] comp = comp_arr
    cdef double[:, ::1] u = u_arr
    for i in range(n):
        mx = -1e308
        for k in range(K):
            acc = 0.0
            for a in range(d):
                diff = means[k, a] - X[i, a]
                u[k, a] = diff * inv_var
                acc = acc + diff * diff
            comp[k] = log_w[k] - 0.5 * acc * inv_var
            if comp[k] > mx:
                mx = comp[k]
        acc = 0.0
        for k in range(K):
            acc = acc + exp(comp[k] - mx)
        logp[i] = mx + log(acc) + norm
        for k in range(K):
            comp[k] = exp(comp[k] - mx) / acc
            for a in range(d):
                score[i, a] += comp[k] * u[k, a]
        if want_hessian:
            for a in range(d):
                hess[i, a, a] = -inv_var
            for k in range(K):
                r = comp[k]
                for a in range(d):
                    for b in range(d):
                        hess[i, a, b] += r * (u[k, a] - score[i, a]) * (u[k, b] - score[i, b])
    return logp_arr, score_arr, hess_arr
