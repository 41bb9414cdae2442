"""Classic SPD preconditioners in a common LDL^T form.

Every preconditioner here is represented as P = (I + L) D (I + L)^T with a
strictly lower triangular L and positive diagonal D, so application is always
two triangular solves plus a diagonal scale:

    jacobi        L = 0,            D = diag(A)
    gauss_seidel  L = tril(A) D^-1, D = diag(A)   (symmetric Gauss-Seidel)
    ic0           incomplete Cholesky, fill restricted to A's lower pattern
    ic2           incomplete Cholesky, level-of-fill <= 2

Incomplete factorizations can break down in floating point (a pivot drops to
zero or below); when that happens the matrix diagonal is inflated by a factor
(1 + sigma) and the factorization restarts, with sigma doubling from 1e-3 for
at most 10 attempts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mmio
from .errors import FactorizationBreakdownError, NotSpdError
from .sparse import LowerFactor, SparseMatrixCsr, ldlt_apply_inverse

VALID_KINDS = frozenset({"identity", "jacobi", "gauss_seidel", "ic0", "ic2", "learned"})


@dataclass(frozen=True)
class FactorPreconditioner:
    """A preconditioner P = (I+L) D (I+L)^T with its construction tag."""

    kind: str
    factor: LowerFactor

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown preconditioner kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.factor.n

    def apply_inverse(self, r: np.ndarray) -> np.ndarray:
        return ldlt_apply_inverse(self.factor, r)

    def to_dense(self) -> np.ndarray:
        return self.factor.to_dense()


def _empty_strict_lower(n: int) -> SparseMatrixCsr:
    return SparseMatrixCsr(n, np.zeros(n + 1, dtype=np.int64),
                           np.empty(0, dtype=np.int64), np.empty(0))


def _positive_diagonal(A: SparseMatrixCsr) -> np.ndarray:
    d = A.diagonal()
    if np.any(d <= 0.0):
        bad = int(np.argmax(d <= 0.0))
        raise NotSpdError(f"nonpositive diagonal entry at row {bad}", pivot=bad)
    return d


def identity_preconditioner(n: int) -> FactorPreconditioner:
    return FactorPreconditioner("identity", LowerFactor(n, _empty_strict_lower(n), np.ones(n)))


def build_jacobi(A: SparseMatrixCsr) -> FactorPreconditioner:
    """P = diag(A)."""
    d = _positive_diagonal(A)
    return FactorPreconditioner("jacobi", LowerFactor(A.n, _empty_strict_lower(A.n), d.copy()))


def build_gauss_seidel(A: SparseMatrixCsr) -> FactorPreconditioner:
    """Symmetric Gauss-Seidel: P = (D + L_A) D^-1 (D + L_A)^T.

    In unit form that is L = L_A D^-1 (column j of A's strict lower scaled by
    1/A_jj) with D = diag(A).
    """
    d = _positive_diagonal(A)
    low = A.strict_lower()
    scaled = SparseMatrixCsr(A.n, low.row_ptr, low.col_idx, low.values / d[low.col_idx])
    return FactorPreconditioner("gauss_seidel", LowerFactor(A.n, scaled, d.copy()))


def _ldlt_on_pattern(A: SparseMatrixCsr, pattern: SparseMatrixCsr):
    """Up-looking LDL^T restricted to ``pattern`` (a strict lower triangle).

    Returns (lvals, d) or None if a pivot is <= 0. Entries of A outside the
    pattern are ignored; pattern slots absent from A start from zero.
    """
    n = A.n
    prow, pcol = pattern.row_ptr, pattern.col_idx
    lval = np.zeros(pattern.nnz)
    d = np.zeros(n)
    arow, acol, avals = A.row_ptr, A.col_idx, A.values
    diag = A.diagonal()
    for i in range(n):
        a0, a1 = arow[i], arow[i + 1]
        row_cols = acol[a0:a1]
        pivot = diag[i]
        p0, p1 = prow[i], prow[i + 1]
        for pi in range(p0, p1):
            j = pcol[pi]
            pos = a0 + np.searchsorted(row_cols, j)
            s = avals[pos] if pos < a1 and acol[pos] == j else 0.0
            ti, tj = p0, prow[j]
            tj_end = prow[j + 1]
            while ti < pi and tj < tj_end:
                ci, cj = pcol[ti], pcol[tj]
                if ci == cj:
                    s -= lval[ti] * d[ci] * lval[tj]
                    ti += 1
                    tj += 1
                elif ci < cj:
                    ti += 1
                else:
                    tj += 1
            lij = s / d[j]
            lval[pi] = lij
            pivot -= lij * lij * d[j]
        if not pivot > 0.0:
            return None
        d[i] = pivot
    return lval, d


def _shifted(A: SparseMatrixCsr, sigma: float) -> SparseMatrixCsr:
    vals = A.values.copy()
    on_diag = A.row_indices() == A.col_idx
    vals[on_diag] *= 1.0 + sigma
    return SparseMatrixCsr(A.n, A.row_ptr, A.col_idx, vals)


def _factor_with_restarts(A: SparseMatrixCsr, pattern: SparseMatrixCsr, kind: str) -> LowerFactor:
    result = _ldlt_on_pattern(A, pattern)
    sigma = 1e-3
    for _ in range(10):
        if result is not None:
            break
        result = _ldlt_on_pattern(_shifted(A, sigma), pattern)
        sigma *= 2.0
    if result is None:
        raise FactorizationBreakdownError(
            f"{kind}: pivot failure persists after 10 diagonal-shift restarts")
    lval, d = result
    lower = SparseMatrixCsr(A.n, pattern.row_ptr, pattern.col_idx, lval)
    return LowerFactor(A.n, lower, d)


def build_ic0(A: SparseMatrixCsr) -> FactorPreconditioner:
    """Zero-fill incomplete Cholesky (LDL^T form) on A's own lower pattern."""
    _positive_diagonal(A)
    return FactorPreconditioner("ic0", _factor_with_restarts(A, A.strict_lower(), "ic0"))


def ic_fill_pattern(A: SparseMatrixCsr, max_level: int) -> SparseMatrixCsr:
    """Symbolic level-of-fill closure of A's strict lower triangle.

    Original entries get level 0; a fill entry (i,j) created while eliminating
    column k has level lev(i,k) + lev(j,k) + 1, minimized over k. Entries with
    level > max_level are dropped and never propagate.
    """
    low = A.strict_lower()
    rows = low.row_indices()
    lev = {}
    cols: list = [[] for _ in range(A.n)]
    for p in range(low.nnz):
        i, j = int(rows[p]), int(low.col_idx[p])
        lev[(i, j)] = 0
        cols[j].append(i)
    for k in range(A.n):
        rows_k = sorted(cols[k])
        for a, j in enumerate(rows_k):
            lj = lev[(j, k)]
            for i in rows_k[a + 1 :]:
                new = lev[(i, k)] + lj + 1
                if new > max_level:
                    continue
                cur = lev.get((i, j))
                if cur is None:
                    lev[(i, j)] = new
                    cols[j].append(i)
                elif new < cur:
                    lev[(i, j)] = new
    if not lev:
        return _empty_strict_lower(A.n)
    ii = np.array([ij[0] for ij in lev], dtype=np.int64)
    jj = np.array([ij[1] for ij in lev], dtype=np.int64)
    return SparseMatrixCsr.from_coo(A.n, ii, jj, np.zeros(len(ii)))


def build_ic2(A: SparseMatrixCsr) -> FactorPreconditioner:
    """Incomplete Cholesky with level-of-fill <= 2 (LDL^T form)."""
    _positive_diagonal(A)
    return FactorPreconditioner("ic2", _factor_with_restarts(A, ic_fill_pattern(A, 2), "ic2"))


BUILDERS = {
    "jacobi": build_jacobi,
    "gauss_seidel": build_gauss_seidel,
    "ic0": build_ic0,
    "ic2": build_ic2,
}


def build(kind: str, A: SparseMatrixCsr) -> FactorPreconditioner:
    if kind == "identity":
        return identity_preconditioner(A.n)
    try:
        return BUILDERS[kind](A)
    except KeyError:
        raise ValueError(f"no builder for preconditioner kind {kind!r}") from None


def save_factor(path_prefix: str, P: FactorPreconditioner) -> None:
    """Dump a factor for inspection: strict lower as general Matrix Market,
    diagonal as a vector file."""
    mmio.save_matrix(f"{path_prefix}_L.mtx", P.factor.strict_lower, symmetric=False)
    mmio.save_vector(f"{path_prefix}_d.mtx", P.factor.diag)
