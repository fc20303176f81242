"""Pure-numpy versions of the compiled SDP operator kernels.

Signatures and results match :mod:`globalpointer._ext._kernels` exactly (up
to floating-point summation order).
"""
import numpy as np


def _owner(ptr):
    return np.repeat(np.arange(len(ptr) - 1), np.diff(ptr))


def apply_op(ptr, rows, cols, vals, X):
    contrib = vals * X[cols, rows]
    return np.bincount(_owner(ptr), weights=contrib, minlength=len(ptr) - 1)


def adjoint(ptr, rows, cols, vals, y, n):
    out = np.zeros((n, n))
    np.add.at(out, (rows, cols), y[_owner(ptr)] * vals)
    return out


def schur(ptr, rows, cols, vals, X, W):
    k = len(ptr) - 1
    G = np.outer(vals, vals) * X[cols[:, None], rows[None, :]] * W[cols[None, :], rows[:, None]]
    S = np.zeros((k, len(vals)))
    S[_owner(ptr), np.arange(len(vals))] = 1.0
    M = S @ G @ S.T
    return 0.5 * (M + M.T)
