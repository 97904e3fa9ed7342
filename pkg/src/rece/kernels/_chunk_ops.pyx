# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backend for the per-block scoring kernels.

Fused passes per block: positive masking, duplicate discount lookup and
the streaming log-sum-exp update, without the temporaries the numpy
backend allocates.  The duplicate table is sliced per row first (keys are
sorted and row-major), so elements of rows without duplicates skip the
search entirely and the rest probe a small, cache-resident range.
Semantics match ``_chunk_ops_py`` (sums accumulate in double regardless
of block dtype).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()

BACKEND_NAME = "cython"

ctypedef fused real:
    cnp.float32_t
    cnp.float64_t


cdef inline Py_ssize_t _lower_bound(
    const cnp.int64_t[::1] keys, Py_ssize_t lo, Py_ssize_t hi, cnp.int64_t key
) noexcept nogil:
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


def forward_block(
    real[:, ::1] block,
    const cnp.int64_t[::1] x_rows,
    const cnp.int64_t[::1] y_items,
    const cnp.int64_t[::1] targets,
    const cnp.int64_t[::1] dup_keys,
    const double[::1] dup_log_counts,
    n_items,
    double[::1] run_max,
    double[::1] run_sum,
    double[::1] neg_max,
    mask_positives,
):
    cdef Py_ssize_t n_r = block.shape[0], n_c = block.shape[1]
    cdef Py_ssize_t n_dup = dup_keys.shape[0]
    cdef Py_ssize_t rr, jj, k, row_lo, row_hi
    cdef cnp.int64_t i, t, base, key, items = n_items
    cdef double v, row_max, raw_max, m_old, m_new, s_new
    cdef int masked = 0
    cdef bint mask_pos = bool(mask_positives)

    with nogil:
        for rr in range(n_r):
            i = x_rows[rr]
            t = targets[i]
            base = i * items
            row_lo = row_hi = 0
            if n_dup > 0:
                row_lo = _lower_bound(dup_keys, 0, n_dup, base)
                row_hi = _lower_bound(dup_keys, row_lo, n_dup, base + items)
            raw_max = -INFINITY
            row_max = -INFINITY
            # pass 1: mask positives, discount duplicates, track both maxima
            for jj in range(n_c):
                if mask_pos and y_items[jj] == t:
                    block[rr, jj] = -INFINITY
                    masked += 1
                    continue
                v = <double> block[rr, jj]
                if v > raw_max:
                    raw_max = v
                if row_hi > row_lo:
                    key = base + y_items[jj]
                    k = _lower_bound(dup_keys, row_lo, row_hi, key)
                    if k < row_hi and dup_keys[k] == key:
                        block[rr, jj] = <real> (v - dup_log_counts[k])
                v = <double> block[rr, jj]
                if v > row_max:
                    row_max = v
            if raw_max > neg_max[i]:
                neg_max[i] = raw_max
            if row_max == -INFINITY:
                continue
            m_old = run_max[i]
            m_new = m_old if m_old > row_max else row_max
            s_new = run_sum[i] * exp(m_old - m_new) if m_old != -INFINITY else 0.0
            # pass 2: accumulate exp of the stored (corrected) row
            for jj in range(n_c):
                v = <double> block[rr, jj]
                if v != -INFINITY:
                    s_new += exp(v - m_new)
            run_max[i] = m_new
            run_sum[i] = s_new
    return masked


def backward_block(
    real[:, ::1] block,
    const cnp.int64_t[::1] x_rows,
    const cnp.int64_t[::1] y_items,
    const cnp.int64_t[::1] targets,
    const cnp.int64_t[::1] dup_keys,
    const double[::1] dup_log_counts,
    n_items,
    const double[::1] log_denom,
    scale,
    mask_positives,
):
    cdef Py_ssize_t n_r = block.shape[0], n_c = block.shape[1]
    cdef Py_ssize_t n_dup = dup_keys.shape[0]
    cdef Py_ssize_t rr, jj, k, row_lo, row_hi
    cdef cnp.int64_t i, t, base, key, items = n_items
    cdef double v, ld, s = scale
    cdef bint mask_pos = bool(mask_positives)

    with nogil:
        for rr in range(n_r):
            i = x_rows[rr]
            t = targets[i]
            base = i * items
            ld = log_denom[i]
            row_lo = row_hi = 0
            if n_dup > 0:
                row_lo = _lower_bound(dup_keys, 0, n_dup, base)
                row_hi = _lower_bound(dup_keys, row_lo, n_dup, base + items)
            for jj in range(n_c):
                if mask_pos and y_items[jj] == t:
                    block[rr, jj] = <real> 0.0
                    continue
                v = <double> block[rr, jj]
                if row_hi > row_lo:
                    key = base + y_items[jj]
                    k = _lower_bound(dup_keys, row_lo, row_hi, key)
                    if k < row_hi and dup_keys[k] == key:
                        v -= dup_log_counts[k]
                block[rr, jj] = <real> (exp(v - ld) * s)
