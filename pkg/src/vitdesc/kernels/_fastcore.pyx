# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled kernels.  Parallelism is always over independent output rows and
# never splits a single reduction across threads, so results are bitwise
# identical for any thread count.

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport INFINITY

cnp.import_array()


# The reductions below run in 8 independent accumulator chains combined in a
# fixed order: grouping never depends on thread count, and the independent
# chains pipeline/vectorize where a single serial sum cannot.

cdef inline double _sqdist(const double* a, const double* b, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t t
    cdef Py_ssize_t d8 = d - (d & 7)
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0
    cdef double f0, f1, f2, f3, f4, f5, f6, f7
    for t in range(0, d8, 8):
        f0 = a[t] - b[t]
        f1 = a[t + 1] - b[t + 1]
        f2 = a[t + 2] - b[t + 2]
        f3 = a[t + 3] - b[t + 3]
        f4 = a[t + 4] - b[t + 4]
        f5 = a[t + 5] - b[t + 5]
        f6 = a[t + 6] - b[t + 6]
        f7 = a[t + 7] - b[t + 7]
        s0 = s0 + f0 * f0
        s1 = s1 + f1 * f1
        s2 = s2 + f2 * f2
        s3 = s3 + f3 * f3
        s4 = s4 + f4 * f4
        s5 = s5 + f5 * f5
        s6 = s6 + f6 * f6
        s7 = s7 + f7 * f7
    for t in range(d8, d):
        f0 = a[t] - b[t]
        s0 = s0 + f0 * f0
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))


cdef inline double _dot(const double* a, const double* b, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t t
    cdef Py_ssize_t d8 = d - (d & 7)
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0
    for t in range(0, d8, 8):
        s0 = s0 + a[t] * b[t]
        s1 = s1 + a[t + 1] * b[t + 1]
        s2 = s2 + a[t + 2] * b[t + 2]
        s3 = s3 + a[t + 3] * b[t + 3]
        s4 = s4 + a[t + 4] * b[t + 4]
        s5 = s5 + a[t + 5] * b[t + 5]
        s6 = s6 + a[t + 6] * b[t + 6]
        s7 = s7 + a[t + 7] * b[t + 7]
    for t in range(d8, d):
        s0 = s0 + a[t] * b[t]
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))


cdef inline void _nearest_row(const double* x, const double* c,
                              Py_ssize_t k, Py_ssize_t d,
                              cnp.int64_t* label, double* sqd) noexcept nogil:
    cdef Py_ssize_t j
    cdef double best = INFINITY
    cdef cnp.int64_t bj = 0
    cdef double dist
    for j in range(k):
        dist = _sqdist(x, c + j * d, d)
        if dist < best:
            best = dist
            bj = j
    label[0] = bj
    sqd[0] = best


def assign_nearest(const double[:, ::1] points, const double[:, ::1] centroids):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t k = centroids.shape[0]
    if centroids.shape[1] != d:
        raise ValueError("dimension mismatch between points and centroids")
    labels = np.empty(n, dtype=np.int64)
    sqd = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] lab_v = labels
    cdef double[::1] sqd_v = sqd
    cdef const double* xp = &points[0, 0] if n else NULL
    cdef const double* cp = &centroids[0, 0] if k else NULL
    cdef Py_ssize_t i
    for i in prange(n, nogil=True, schedule="static"):
        _nearest_row(xp + i * d, cp, k, d, &lab_v[i], &sqd_v[i])
    return labels, sqd


cdef inline void _argmax_row(const double* q, const double* b,
                             Py_ssize_t m, Py_ssize_t d,
                             cnp.int64_t* idx, double* sim) noexcept nogil:
    cdef Py_ssize_t j
    cdef double best = -INFINITY
    cdef cnp.int64_t bj = 0
    cdef double dot
    for j in range(m):
        dot = _dot(q, b + j * d, d)
        if dot > best:
            best = dot
            bj = j
    idx[0] = bj
    sim[0] = best


def cosine_argmax(const double[:, ::1] queries, const double[:, ::1] bank):
    cdef Py_ssize_t n = queries.shape[0]
    cdef Py_ssize_t d = queries.shape[1]
    cdef Py_ssize_t m = bank.shape[0]
    if bank.shape[1] != d:
        raise ValueError("dimension mismatch between queries and bank")
    idx = np.empty(n, dtype=np.int64)
    sim = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] idx_v = idx
    cdef double[::1] sim_v = sim
    cdef const double* qp = &queries[0, 0] if n else NULL
    cdef const double* bp = &bank[0, 0] if m else NULL
    cdef Py_ssize_t i
    for i in prange(n, nogil=True, schedule="static"):
        _argmax_row(qp + i * d, bp, m, d, &idx_v[i], &sim_v[i])
    return idx, sim


def group_sums(const double[:, ::1] points, const cnp.int64_t[::1] labels, Py_ssize_t k):
    # Single sequential pass in row order: deterministic accumulation.
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    sums = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    cdef double[:, ::1] sums_v = sums
    cdef cnp.int64_t[::1] counts_v = counts
    cdef Py_ssize_t i, t
    cdef cnp.int64_t lab
    with nogil:
        for i in range(n):
            lab = labels[i]
            counts_v[lab] += 1
            for t in range(d):
                sums_v[lab, t] += points[i, t]
    return sums, counts


def log_bin_gather(const float[:, :, ::1] data, Py_ssize_t levels, Py_ssize_t base):
    cdef Py_ssize_t h = data.shape[0]
    cdef Py_ssize_t w = data.shape[1]
    cdef Py_ssize_t d = data.shape[2]
    out = np.zeros((h, w, d * (1 + 8 * levels)), dtype=np.float32)
    cdef float[:, :, ::1] out_v = out
    cdef Py_ssize_t cell, i, j, t, level, slot, dil, oy, ox, ny, nx, off
    cdef Py_ssize_t n_cells = h * w
    for cell in prange(n_cells, nogil=True, schedule="static"):
        i = cell // w
        j = cell % w
        for t in range(d):
            out_v[i, j, t] = data[i, j, t]
        slot = 1
        for level in range(1, levels + 1):
            dil = 1
            for t in range(level - 1):
                dil = dil * base
            for oy in range(-1, 2):
                for ox in range(-1, 2):
                    if oy == 0 and ox == 0:
                        continue
                    ny = i + oy * dil
                    nx = j + ox * dil
                    if 0 <= ny < h and 0 <= nx < w:
                        off = slot * d
                        for t in range(d):
                            out_v[i, j, off + t] = data[ny, nx, t]
                    slot = slot + 1
    return out
