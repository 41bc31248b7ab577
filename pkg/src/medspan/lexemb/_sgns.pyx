# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled skip-gram negative-sampling epoch.

Mirrors ``_sgns_py.sgns_epoch`` operation for operation; see that module
for the contract.  Kept scalar on purpose: the per-pair update loop is the
hot path that pure Python cannot make fast.
"""
from libc.math cimport exp, log

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double _CLAMP = 30.0


cdef inline double _sigmoid(double x) nogil:
    if x > _CLAMP:
        x = _CLAMP
    elif x < -_CLAMP:
        x = -_CLAMP
    return 1.0 / (1.0 + exp(-x))


def sgns_epoch(
    double[:, ::1] w_in,
    double[:, ::1] w_out,
    int[::1] centers,
    int[::1] contexts,
    int[:, ::1] negatives,
    double lr,
):
    """Run one epoch of in-place SGD updates; returns the summed loss."""
    cdef Py_ssize_t n_pairs = centers.shape[0]
    cdef Py_ssize_t k = negatives.shape[1]
    cdef Py_ssize_t dim = w_in.shape[1]
    cdef double[::1] acc = np.zeros(dim, dtype=np.float64)
    cdef double total = 0.0
    cdef double f, s, g
    cdef Py_ssize_t t, j, d
    cdef int c, o, neg

    with nogil:
        for t in range(n_pairs):
            c = centers[t]
            o = contexts[t]
            for d in range(dim):
                acc[d] = 0.0
            f = 0.0
            for d in range(dim):
                f += w_in[c, d] * w_out[o, d]
            s = _sigmoid(f)
            if s < 1e-12:
                total -= log(1e-12)
            else:
                total -= log(s)
            g = (1.0 - s) * lr
            for d in range(dim):
                acc[d] += g * w_out[o, d]
            for d in range(dim):
                w_out[o, d] += g * w_in[c, d]
            for j in range(k):
                neg = negatives[t, j]
                if neg == o:
                    continue
                f = 0.0
                for d in range(dim):
                    f += w_in[c, d] * w_out[neg, d]
                s = _sigmoid(f)
                if 1.0 - s < 1e-12:
                    total -= log(1e-12)
                else:
                    total -= log(1.0 - s)
                g = -s * lr
                for d in range(dim):
                    acc[d] += g * w_out[neg, d]
                for d in range(dim):
                    w_out[neg, d] += g * w_in[c, d]
            for d in range(dim):
                w_in[c, d] += acc[d]
    return total
