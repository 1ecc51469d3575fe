# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for assembly, gathers and filter construction.

Negative indices mean "no target": the value is dropped on scatter and reads
back as zero on gather. This is how fixed DOFs are excluded from reduced
systems without building masks at every call.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def scatter_add_vector(double[::1] out, const cnp.int64_t[::1] idx,
                       const double[::1] vals):
    cdef Py_ssize_t k, n = idx.shape[0]
    cdef cnp.int64_t i
    for k in range(n):
        i = idx[k]
        if i >= 0:
            out[i] += vals[k]


def scatter_add_matrix(double[:, ::1] out, const cnp.int64_t[::1] rows,
                       const cnp.int64_t[::1] cols, const double[::1] vals):
    cdef Py_ssize_t k, n = rows.shape[0]
    cdef cnp.int64_t r, c
    for k in range(n):
        r = rows[k]
        c = cols[k]
        if r >= 0 and c >= 0:
            out[r, c] += vals[k]


def gather_vector(const double[::1] src, const cnp.int64_t[::1] idx):
    cdef Py_ssize_t k, n = idx.shape[0]
    cdef cnp.int64_t i
    res = np.zeros(n)
    cdef double[::1] r = res
    for k in range(n):
        i = idx[k]
        if i >= 0:
            r[k] = src[i]
    return res


def gather_matrix(const double[:, ::1] src, const cnp.int64_t[::1] rows,
                  const cnp.int64_t[::1] cols):
    cdef Py_ssize_t k, n = rows.shape[0]
    cdef cnp.int64_t i, j
    res = np.zeros(n)
    cdef double[::1] r = res
    for k in range(n):
        i = rows[k]
        j = cols[k]
        if i >= 0 and j >= 0:
            r[k] = src[i, j]
    return res


def gather_lowrank(const double[:, ::1] left, const double[:, ::1] right,
                   const cnp.int64_t[::1] rows, const cnp.int64_t[::1] cols):
    """Entries of ``left @ right.T`` at (rows, cols) without forming it."""
    cdef Py_ssize_t k, q, n = rows.shape[0], rank = left.shape[1]
    cdef cnp.int64_t i, j
    cdef double acc
    res = np.zeros(n)
    cdef double[::1] r = res
    for k in range(n):
        i = rows[k]
        j = cols[k]
        if i >= 0 and j >= 0:
            acc = 0.0
            for q in range(rank):
                acc += left[i, q] * right[j, q]
            r[k] = acc
    return res


def cone_weights(Py_ssize_t nelx, Py_ssize_t nely, double radius):
    """COO triplets of max(0, radius - dist) between element centroids."""
    cdef Py_ssize_t reach = <Py_ssize_t>radius
    cdef Py_ssize_t cap = nelx * nely * (2 * reach + 1) * (2 * reach + 1)
    rows_a = np.empty(cap, dtype=np.int64)
    cols_a = np.empty(cap, dtype=np.int64)
    vals_a = np.empty(cap)
    cdef cnp.int64_t[::1] rows = rows_a
    cdef cnp.int64_t[::1] cols = cols_a
    cdef double[::1] vals = vals_a
    cdef Py_ssize_t i1, j1, i2, j2, nnz = 0
    cdef double w
    for i1 in range(nelx):
        for j1 in range(nely):
            for i2 in range(max(i1 - reach, 0), min(i1 + reach + 1, nelx)):
                for j2 in range(max(j1 - reach, 0), min(j1 + reach + 1, nely)):
                    w = radius - sqrt(<double>((i1 - i2) * (i1 - i2) + (j1 - j2) * (j1 - j2)))
                    if w > 0.0:
                        rows[nnz] = i1 * nely + j1
                        cols[nnz] = i2 * nely + j2
                        vals[nnz] = w
                        nnz += 1
    return rows_a[:nnz].copy(), cols_a[:nnz].copy(), vals_a[:nnz].copy()
