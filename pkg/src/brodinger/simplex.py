"""Dense two-phase revised simplex with Bland's rule.

Built for small equality-constrained transport LPs (tens of rows, up to ~1e6
columns); Bland's anti-cycling rule makes the pivot sequence, and hence the
returned vertex, deterministic.  Redundant constraint rows are detected and
dropped during phase one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError, ConvergenceError


@dataclass
class LpSolution:
    x: np.ndarray
    value: float
    basis: np.ndarray
    iterations: int


def _bland_iterate(A, b, c, basis, max_iter, tol):
    m, n = A.shape
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise ConvergenceError(f"simplex exceeded {max_iter} pivots")
        B = A[:, basis]
        xb = np.linalg.solve(B, b)
        y = np.linalg.solve(B.T, c[basis])
        reduced = c - y @ A
        reduced[basis] = 0.0
        entering_candidates = np.nonzero(reduced < -tol)[0]
        if entering_candidates.size == 0:
            return basis, xb, it
        j = int(entering_candidates[0])  # Bland: smallest index enters
        direction = np.linalg.solve(B, A[:, j])
        positive = direction > tol
        if not np.any(positive):
            raise ConstraintError("LP is unbounded")
        ratios = np.full(m, np.inf)
        ratios[positive] = xb[positive] / direction[positive]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + tol)[0]
        leave = ties[np.argmin(basis[ties])]  # Bland: smallest basic index leaves
        basis = basis.copy()
        basis[leave] = j
        xb = xb - best * direction
        xb[leave] = best


def solve_lp(c, A, b, tol: float = 1e-9, max_iter: int = 100_000) -> LpSolution:
    """Minimize c @ x subject to A x = b, x >= 0 (A dense, full or deficient
    row rank).  Returns the optimal vertex reached by Bland pivoting."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape

    flip = b < 0
    A = A.copy()
    A[flip] *= -1.0
    b[flip] *= -1.0

    # phase one: artificial basis
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = np.arange(n, n + m)
    basis, xb, it1 = _bland_iterate(A1, b, c1, basis, max_iter, tol)
    infeas = float(c1[basis] @ xb)
    if infeas > 1e-7:
        raise ConstraintError(f"LP infeasible (phase-one objective {infeas:.3e})")

    # drive artificials out of the basis; a row with no real pivot is redundant
    for pos in range(m):
        if basis[pos] < n:
            continue
        B = A1[:, basis]
        row = np.linalg.solve(B, A)[pos]
        pivots = np.nonzero(np.abs(row) > 1e-8)[0]
        pivots = [j for j in pivots if j not in set(basis.tolist())]
        if pivots:
            basis[pos] = int(pivots[0])

    redundant = [p for p in range(m) if basis[p] >= n]
    if redundant:
        A = np.delete(A, redundant, axis=0)
        b = np.delete(b, redundant)
        basis = np.delete(basis, redundant)
        m = A.shape[0]

    basis, xb, it2 = _bland_iterate(A, b, c, basis, max_iter, tol)
    x = np.zeros(n)
    x[basis] = np.maximum(xb, 0.0)
    return LpSolution(x=x, value=float(c @ x), basis=basis, iterations=it1 + it2)
