# cython: language_level=3
"""Compiled sampler kernels. Mirrors ``_pykernels`` function for function."""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow, ceil

cnp.import_array()


def cooling_factors(const long long[:, :] visits, const long long[:] counts,
                    long long t, long long hard_block, double gamma, double eta):
    cdef Py_ssize_t n = counts.shape[0]
    cdef Py_ssize_t i, j
    cdef long long c
    cdef double prod
    out_arr = np.ones(n, dtype=np.float64)
    cdef double[:] out = out_arr
    for i in range(n):
        c = counts[i]
        if c == 0:
            continue
        if t - visits[i, c - 1] <= hard_block:
            out[i] = 0.0
            continue
        prod = 1.0
        for j in range(c):
            prod *= 1.0 - gamma * pow(eta, <double>(t - visits[i, j]))
        out[i] = prod
    return out_arr


def rank_weights(const long long[:] order, const signed char[:] kind, int n_kinds,
                 double top_pct, double rho, double floor):
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t pos, start, end, keep, n_k, row
    cdef double r, w
    weights_arr = np.zeros(n, dtype=np.float64)
    ranks_arr = np.full(n, np.nan, dtype=np.float64)
    cdef double[:] weights = weights_arr
    cdef double[:] ranks = ranks_arr
    start = 0
    while start < n:
        end = start
        while end < n and kind[order[end]] == kind[order[start]]:
            end += 1
        n_k = end - start
        keep = <Py_ssize_t>ceil(top_pct * n_k - 1e-9)
        if keep < 1:
            keep = 1
        if keep > n_k:
            keep = n_k
        for pos in range(keep):
            row = order[start + pos]
            if keep == 1:
                r = 0.0
            else:
                r = <double>pos / <double>(keep - 1)
            w = pow(1.0 - r, rho)
            if w < floor:
                w = floor
            ranks[row] = r
            weights[row] = w
        start = end
    return weights_arr, ranks_arr


def sample_without_replacement(const double[:] probs, const double[:] uniforms):
    cdef Py_ssize_t m = probs.shape[0]
    cdef Py_ssize_t k = uniforms.shape[0]
    cdef Py_ssize_t i, j, pick, last_nz
    cdef double total, u, acc
    work_arr = np.array(probs, dtype=np.float64, copy=True)
    cdef double[:] work = work_arr
    out_arr = np.empty(k, dtype=np.int64)
    cdef long long[:] out = out_arr
    for j in range(k):
        total = 0.0
        last_nz = -1
        for i in range(m):
            total += work[i]
            if work[i] > 0.0:
                last_nz = i
        if last_nz < 0:
            raise ValueError("ran out of positive-probability entries")
        u = uniforms[j] * total
        acc = 0.0
        pick = last_nz
        for i in range(m):
            acc += work[i]
            if acc > u and work[i] > 0.0:
                pick = i
                break
        out[j] = pick
        work[pick] = 0.0
    return out_arr
