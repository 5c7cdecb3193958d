# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CKY kernels; same contract as ``chart_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def decode_table(double[:, :, ::1] scores, cost=None):
    cdef Py_ssize_t n = scores.shape[0] - 1
    cdef Py_ssize_t L = scores.shape[2]
    cdef double[:, :, ::1] cst
    cdef bint has_cost = cost is not None
    if has_cost:
        cst = np.ascontiguousarray(cost, dtype=np.float64)
    best_a = np.zeros((n + 1, n + 1))
    label_a = np.zeros((n + 1, n + 1), dtype=np.int64)
    split_a = np.full((n + 1, n + 1), -1, dtype=np.int64)
    cdef double[:, ::1] best = best_a
    cdef long long[:, ::1] label = label_a
    cdef long long[:, ::1] split = split_a
    cdef Py_ssize_t width, i, j, k, l, lab, k_best
    cdef double s, v, c, c_best
    for width in range(1, n + 1):
        for i in range(n - width + 1):
            j = i + width
            lab = 0
            s = scores[i, j, 0]
            if has_cost:
                s = s + cst[i, j, 0]
            for l in range(1, L):
                v = scores[i, j, l]
                if has_cost:
                    v = v + cst[i, j, l]
                if v > s:
                    s = v
                    lab = l
            if width > 1:
                k_best = i + 1
                c_best = best[i, i + 1] + best[i + 1, j]
                for k in range(i + 2, j):
                    c = best[i, k] + best[k, j]
                    if c > c_best:
                        c_best = c
                        k_best = k
                split[i, j] = k_best
                s = s + c_best
            best[i, j] = s
            label[i, j] = lab
    return best_a, label_a, split_a


def decode_split(double[:, :, ::1] pre, double[:, ::1] fence, double[:, ::1] V, cost, Py_ssize_t dummy):
    cdef Py_ssize_t n = pre.shape[0] - 1
    cdef Py_ssize_t H = pre.shape[2]
    cdef Py_ssize_t L = V.shape[1]
    cdef double[:, :, ::1] cst
    cdef bint has_cost = cost is not None
    if has_cost:
        cst = np.ascontiguousarray(cost, dtype=np.float64)
    best_a = np.zeros((n + 1, n + 1))
    label_a = np.zeros((n + 1, n + 1), dtype=np.int64)
    split_a = np.full((n + 1, n + 1), -1, dtype=np.int64)
    row_a = np.zeros(L)
    hid_a = np.zeros(H)
    cdef double[:, ::1] best = best_a
    cdef long long[:, ::1] label = label_a
    cdef long long[:, ::1] split = split_a
    cdef double[::1] row = row_a
    cdef double[::1] hid = hid_a
    cdef Py_ssize_t width, i, j, k, l, h, lab, k_best
    cdef double s, c, c_best, x
    for width in range(1, n + 1):
        for i in range(n - width + 1):
            j = i + width
            c_best = 0.0
            k_best = -1
            if width > 1:
                k_best = i + 1
                c_best = best[i, i + 1] + best[i + 1, j]
                for k in range(i + 2, j):
                    c = best[i, k] + best[k, j]
                    if c > c_best:
                        c_best = c
                        k_best = k
                split[i, j] = k_best
            for h in range(H):
                x = pre[i, j, h]
                if k_best >= 0:
                    x = x + fence[k_best, h]
                hid[h] = x if x > 0.0 else 0.0
            for l in range(L):
                row[l] = 0.0
            for h in range(H):
                x = hid[h]
                if x != 0.0:
                    for l in range(L):
                        row[l] += x * V[h, l]
            row[dummy] = 0.0
            if has_cost:
                for l in range(L):
                    row[l] += cst[i, j, l]
            lab = 0
            s = row[0]
            for l in range(1, L):
                if row[l] > s:
                    s = row[l]
                    lab = l
            best[i, j] = s + c_best if width > 1 else s
            label[i, j] = lab
    return best_a, label_a, split_a
