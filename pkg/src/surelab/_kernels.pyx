# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def selective_risks(incorrect_sorted):
    cdef const double[::1] e = np.ascontiguousarray(incorrect_sorted, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] r = out
    cdef double acc = 0.0
    for i in range(n):
        acc += e[i]
        r[i] = acc / <double>(i + 1)
    return out


def auroc_sorted(conf_asc, positive):
    cdef const double[::1] c = np.ascontiguousarray(conf_asc, dtype=np.float64)
    cdef const unsigned char[::1] p = np.ascontiguousarray(positive, dtype=np.uint8)
    cdef Py_ssize_t n = c.shape[0], i = 0, j, k
    cdef double rank_sum = 0.0, mid
    cdef Py_ssize_t n_pos = 0, grp_pos
    while i < n:
        j = i
        grp_pos = 0
        while j < n and c[j] == c[i]:
            grp_pos += p[j]
            j += 1
        mid = (i + j + 1) / 2.0
        for k in range(grp_pos):
            rank_sum += mid
        n_pos += grp_pos
        i = j
    cdef double u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (<double>n_pos * <double>(n - n_pos))


def fpr_at_tpr_sorted(conf_desc, positive, double tpr_target):
    cdef const double[::1] c = np.ascontiguousarray(conf_desc, dtype=np.float64)
    cdef const unsigned char[::1] p = np.ascontiguousarray(positive, dtype=np.uint8)
    cdef Py_ssize_t n = c.shape[0], i, tp = 0, fp = 0, n_pos = 0
    for i in range(n):
        n_pos += p[i]
    cdef Py_ssize_t n_neg = n - n_pos
    for i in range(n):
        if p[i]:
            tp += 1
        else:
            fp += 1
        if (i == n - 1 or c[i + 1] != c[i]) and (<double>tp / <double>n_pos >= tpr_target):
            return fp / <double>n_neg
    return fp / <double>n_neg


def sgd_update(double[::1] param, const double[::1] grad, double[::1] velocity,
               double lr, double momentum, double weight_decay):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double v
    for i in range(n):
        v = velocity[i] * momentum
        v = v + (grad[i] + weight_decay * param[i])
        velocity[i] = v
        param[i] = param[i] - lr * v


def swa_accumulate(double[::1] avg, const double[::1] current, long count):
    cdef Py_ssize_t i, n = avg.shape[0]
    cdef double cnt = <double>count, den = <double>(count + 1)
    for i in range(n):
        avg[i] = (avg[i] * cnt + current[i]) / den
