"""Dense symmetric eigenvalues via cyclic Jacobi rotations, and condition numbers.

The eigensolver is deliberately self-contained (no LAPACK): condition numbers
are an evaluation metric here, so a simple O(n^3)-per-sweep method at a hard
size budget is the right tool. The rotation kernel is compiled with numba.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import DenseBudgetError, DimensionMismatchError, NotSpdError
from .sparse import DENSE_BUDGET, SparseMatrixCsr


@njit(cache=True)
def _jacobi_sweeps(A, tol, max_sweeps):
    """Cyclic-by-row Jacobi on a dense symmetric matrix, in place.

    Rotations zero A[p,q] one pair at a time; early sweeps skip entries below
    a threshold so big off-diagonal mass is attacked first. Stops once the
    off-diagonal Frobenius mass drops below tol^2 times the total mass.
    Returns the number of completed sweeps.
    """
    n = A.shape[0]
    for sweep in range(max_sweeps):
        off2 = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off2 += 2.0 * A[i, j] * A[i, j]
        norm2 = off2
        for i in range(n):
            norm2 += A[i, i] * A[i, i]
        if off2 <= tol * tol * norm2 or norm2 == 0.0:
            return sweep
        thresh = np.sqrt(off2) / (n * 2.0) if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= thresh or apq == 0.0:
                    continue
                app = A[p, p]
                aqq = A[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
    return max_sweeps


def symmetric_eigenvalues(M: np.ndarray, tol: float = 1e-12, max_sweeps: int = 40) -> np.ndarray:
    """All eigenvalues of a dense symmetric matrix, ascending.

    Only the averaged symmetric part (M + M^T)/2 is diagonalized, which
    absorbs round-off asymmetry from matrix products.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError("input must be a square matrix")
    n = M.shape[0]
    if n > DENSE_BUDGET:
        raise DenseBudgetError(f"n={n} exceeds the dense eigenvalue budget {DENSE_BUDGET}")
    if n == 0:
        return np.empty(0)
    work = np.ascontiguousarray((M + M.T) / 2.0)
    _jacobi_sweeps(work, tol, max_sweeps)
    return np.sort(np.diag(work).copy())


def condition_number_from_dense(M: np.ndarray) -> float:
    """kappa = lambda_max / lambda_min of a dense symmetric matrix; the matrix
    must be positive definite."""
    ev = symmetric_eigenvalues(M)
    lo, hi = ev[0], ev[-1]
    if lo <= 0.0:
        raise NotSpdError(f"smallest eigenvalue {lo!r} is not positive")
    return float(hi / lo)


def condition_number_dense(A: SparseMatrixCsr) -> float:
    """kappa(A) of a sparse symmetric matrix, via densify + Jacobi eigensolve."""
    return condition_number_from_dense(A.to_dense())
