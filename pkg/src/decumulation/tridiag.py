"""Thomas algorithm for tridiagonal systems."""

from __future__ import annotations

import numpy as np


class PivotBreakdown(ArithmeticError):
    """Zero pivot during elimination. Cannot happen for an M-matrix."""


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Solve the tridiagonal system with the given bands.

    Row ``j`` reads ``lower[j]*w[j-1] + diag[j]*w[j] + upper[j]*w[j+1] = rhs[j]``;
    ``lower[0]`` and ``upper[-1]`` are ignored. No pivoting, so the matrix
    should be diagonally dominant.
    """
    # plain lists are much faster than numpy scalars in the sweep
    a = np.asarray(lower, dtype=float).tolist()
    b = np.asarray(diag, dtype=float).tolist()
    c = np.asarray(upper, dtype=float).tolist()
    d = np.asarray(rhs, dtype=float).tolist()
    n = len(b)
    if not (len(a) == len(c) == len(d) == n):
        raise ValueError("band lengths differ")
    cp = [0.0] * n
    dp = [0.0] * n
    pivot = b[0]
    if pivot == 0.0:
        raise PivotBreakdown("zero pivot in row 0")
    cp[0] = c[0] / pivot
    dp[0] = d[0] / pivot
    for j in range(1, n):
        pivot = b[j] - a[j] * cp[j - 1]
        if pivot == 0.0:
            raise PivotBreakdown(f"zero pivot in row {j}")
        cp[j] = c[j] / pivot
        dp[j] = (d[j] - a[j] * dp[j - 1]) / pivot
    w = [0.0] * n
    w[-1] = dp[-1]
    for j in range(n - 2, -1, -1):
        w[j] = dp[j] - cp[j] * w[j + 1]
    return np.array(w)


def tridiagonal_matvec(lower, diag, upper, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    out = diag * w
    out[1:] += lower[1:] * w[:-1]
    out[:-1] += upper[:-1] * w[1:]
    return out
