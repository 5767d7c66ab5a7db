# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Bellman sweep kernels.

``jacobi_min`` is the synchronous Bellman application used for residual
certification; ``gauss_seidel`` updates values in place following a node
ordering and is used to accelerate the fixed-point iteration (alternating
orderings propagate information along characteristics in few sweeps).
"""

from libc.math cimport INFINITY

import numpy as np

HAS_GAUSS_SEIDEL = True


def jacobi_min(
    const int[:, :, ::1] idx,
    const double[:, :, ::1] w,
    const double[:, ::1] base,
    double gamma,
    const double[::1] u,
    double[::1] out,
):
    cdef Py_ssize_t na = idx.shape[0]
    cdef Py_ssize_t n_nodes = idx.shape[1]
    cdef Py_ssize_t n, a
    cdef double best, v
    with nogil:
        for n in range(n_nodes):
            best = INFINITY
            for a in range(na):
                v = base[a, n] + gamma * (
                    w[a, n, 0] * u[idx[a, n, 0]]
                    + w[a, n, 1] * u[idx[a, n, 1]]
                    + w[a, n, 2] * u[idx[a, n, 2]]
                    + w[a, n, 3] * u[idx[a, n, 3]]
                )
                if v < best:
                    best = v
            out[n] = best


def gauss_seidel(
    const int[:, :, ::1] idx,
    const double[:, :, ::1] w,
    const double[:, ::1] base,
    double gamma,
    double[::1] u,
    const int[::1] order,
):
    cdef Py_ssize_t na = idx.shape[0]
    cdef Py_ssize_t n_nodes = order.shape[0]
    cdef Py_ssize_t k, a, n
    cdef double best, v
    with nogil:
        for k in range(n_nodes):
            n = order[k]
            best = INFINITY
            for a in range(na):
                v = base[a, n] + gamma * (
                    w[a, n, 0] * u[idx[a, n, 0]]
                    + w[a, n, 1] * u[idx[a, n, 1]]
                    + w[a, n, 2] * u[idx[a, n, 2]]
                    + w[a, n, 3] * u[idx[a, n, 3]]
                )
                if v < best:
                    best = v
            u[n] = best
