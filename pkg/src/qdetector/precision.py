"""Double-double arithmetic and refined linear solves.

Far from equilibrium the slowest Liouvillian mode can be ~1e-9 of the
fastest. Drazin contractions then cancel components of size 1/|lambda_1|
down to O(1) results, which plain float64 cannot resolve. Vectors here are
carried as unevaluated sums ``hi + lo`` of two float64 arrays, and linear
systems are solved by iterative refinement with residuals computed in
double-double (the LU factorisation itself stays float64).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

_SPLIT = 134217729.0  # 2**27 + 1


def two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    c = _SPLIT * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def dd_add(ah, al, bh, bl):
    s, e = two_sum(ah, bh)
    return two_sum(s, e + al + bl)


def dd_matvec(A: np.ndarray, xh: np.ndarray, xl: np.ndarray):
    """``A @ (xh + xl)`` for a float64 matrix ``A``, returned as ``(hi, lo)``.

    Products are split exactly, then summed along rows by a pairwise
    ``two_sum`` cascade whose rounding errors are accumulated alongside.
    """
    P, E = two_prod(A, xh[None, :])
    err = (E + A * xl[None, :]).sum(axis=1)
    while P.shape[1] > 1:
        if P.shape[1] % 2:
            P = np.concatenate([P, np.zeros((P.shape[0], 1))], axis=1)
        P, e = two_sum(P[:, 0::2], P[:, 1::2])
        err = err + e.sum(axis=1)
    return two_sum(P[:, 0], err)


def dd_dot(a: np.ndarray, xh: np.ndarray, xl: np.ndarray) -> float:
    hi, lo = dd_matvec(a[None, :], xh, xl)
    return float(hi[0] + lo[0])


class RefinedSolver:
    """LU of a float64 matrix with double-double iterative refinement."""

    def __init__(self, K: np.ndarray, rtol: float = 1e-28, maxit: int = 30):
        self.K = np.asarray(K, dtype=float)
        self.lu = sla.lu_factor(self.K, check_finite=True)
        self.rtol = rtol
        self.maxit = maxit

    def solve(self, bh: np.ndarray, bl: np.ndarray | None = None):
        """Return ``(xh, xl)``; raise ``ArithmeticError`` if refinement stalls."""
        if bl is None:
            bl = np.zeros_like(bh)
        xh = sla.lu_solve(self.lu, bh)
        xl = np.zeros_like(xh)
        if not np.all(np.isfinite(xh)):
            raise ArithmeticError("non-finite solution")
        prev = np.inf
        for _ in range(self.maxit):
            rh, rl = dd_matvec(self.K, xh, xl)
            rh, rl = dd_add(bh, bl, -rh, -rl)
            d = sla.lu_solve(self.lu, rh + rl)
            xh, xl = dd_add(xh, xl, d, np.zeros_like(d))
            size = np.abs(d).max()
            scale = np.abs(xh).max()
            if size <= self.rtol * scale:
                return xh, xl
            # refinement converges geometrically when cond(K) * eps < 1;
            # a non-shrinking correction past the noise floor means it won't
            if size > 0.5 * prev and size > 1e-30 * scale:
                break
            prev = size
        if np.abs(d).max() <= 1e-24 * np.abs(xh).max():
            return xh, xl
        raise ArithmeticError("iterative refinement did not converge")


def dd_scale(a: float, xh: np.ndarray, xl: np.ndarray):
    """``a * (xh + xl)`` in double-double for a float scalar ``a``."""
    p, e = two_prod(a, xh)
    return two_sum(p, e + a * xl)
