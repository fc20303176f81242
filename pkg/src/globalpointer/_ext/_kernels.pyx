# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the sparse-constraint SDP operators.

Each constraint matrix ``A_k`` is stored as the entries
``rows[ptr[k]:ptr[k+1]]``, ``cols[...]``, ``vals[...]`` listing every nonzero
``A_k[r, c]`` (both triangles).
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def apply_op(const long[::1] ptr, const long[::1] rows, const long[::1] cols,
             const double[::1] vals, const double[:, ::1] X):
    cdef Py_ssize_t k = ptr.shape[0] - 1
    out = np.zeros(k)
    cdef double[::1] o = out
    cdef Py_ssize_t a, p
    cdef double s
    for a in range(k):
        s = 0.0
        for p in range(ptr[a], ptr[a + 1]):
            s += vals[p] * X[cols[p], rows[p]]
        o[a] = s
    return out


def adjoint(const long[::1] ptr, const long[::1] rows, const long[::1] cols,
            const double[::1] vals, const double[::1] y, Py_ssize_t n):
    cdef Py_ssize_t k = ptr.shape[0] - 1
    out = np.zeros((n, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t a, p
    cdef double ya
    for a in range(k):
        ya = y[a]
        if ya == 0.0:
            continue
        for p in range(ptr[a], ptr[a + 1]):
            o[rows[p], cols[p]] += ya * vals[p]
    return out


def schur(const long[::1] ptr, const long[::1] rows, const long[::1] cols,
          const double[::1] vals, const double[:, ::1] X, const double[:, ::1] W):
    """``M[k, l] = trace(A_k X A_l W)`` for symmetric ``X`` and ``W``."""
    cdef Py_ssize_t k = ptr.shape[0] - 1
    out = np.empty((k, k))
    cdef double[:, ::1] M = out
    cdef Py_ssize_t a, b, p, q
    cdef double s, vp
    cdef long rp, cp
    for a in range(k):
        for b in range(a, k):
            s = 0.0
            for p in range(ptr[a], ptr[a + 1]):
                vp = vals[p]
                rp = rows[p]
                cp = cols[p]
                for q in range(ptr[b], ptr[b + 1]):
                    s += vp * vals[q] * X[cp, rows[q]] * W[cols[q], rp]
            M[a, b] = s
            M[b, a] = s
    return out
