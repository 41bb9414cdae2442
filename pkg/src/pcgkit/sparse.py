"""Sparse CSR storage, matrix-vector kernels, LDL^T factors, and dense oracles.

All reals are float64: the solver targets relative residuals down to 1e-12,
which single precision cannot reach. Symmetric matrices store both triangles
explicitly, which keeps products and graph construction simple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    DenseBudgetError,
    DimensionMismatchError,
    InvalidFactorError,
    NotSpdError,
)

DENSE_BUDGET = 4096


# ---------------------------------------------------------------------------
# storage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseMatrixCsr:
    """Square sparse matrix in compressed sparse row form.

    Invariants (checked at construction): row_ptr is non-decreasing with
    row_ptr[0] == 0 and row_ptr[n] == nnz; column indices are strictly
    increasing within each row and all < n.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.ascontiguousarray(self.col_idx, dtype=np.int64))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float64))
        n, rp, ci = self.n, self.row_ptr, self.col_idx
        if n < 0 or rp.shape != (n + 1,):
            raise DimensionMismatchError(f"row_ptr must have length n+1={n + 1}")
        if rp[0] != 0 or rp[-1] != len(ci) or len(ci) != len(self.values):
            raise DimensionMismatchError("row_ptr endpoints disagree with nnz")
        if np.any(np.diff(rp) < 0):
            raise DimensionMismatchError("row_ptr must be non-decreasing")
        if len(ci) and (ci.min() < 0 or ci.max() >= n):
            raise DimensionMismatchError("column index out of range")
        # strictly increasing columns within each row: every in-row adjacent
        # pair must increase; pairs straddling a row boundary are exempt.
        if len(ci) > 1:
            inc = np.diff(ci) > 0
            starts = np.zeros(len(ci) - 1, dtype=bool)
            inner = rp[1:-1]
            starts[inner[(inner > 0) & (inner < len(ci))] - 1] = True
            if not np.all(inc | starts):
                raise DimensionMismatchError("columns must strictly increase within rows")

    # -- constructors --------------------------------------------------

    @staticmethod
    def from_coo(n, rows, cols, vals):
        """Build from triplets; duplicate (i, j) entries are summed.

        Duplicates are summed in ascending input order per slot, so the result
        is deterministic for a fixed triplet sequence.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (len(rows) == len(cols) == len(vals)):
            raise DimensionMismatchError("COO arrays must share a length")
        if len(rows) == 0:
            return SparseMatrixCsr(n, np.zeros(n + 1, dtype=np.int64), rows, vals)
        order = np.lexsort((cols, rows))  # stable: ties keep input order
        r, c, v = rows[order], cols[order], vals[order]
        new = np.empty(len(r), dtype=bool)
        new[0] = True
        new[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        starts = np.flatnonzero(new)
        summed = np.add.reduceat(v, starts)
        r, c = r[starts], c[starts]
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(row_ptr, r + 1, 1)
        np.cumsum(row_ptr, out=row_ptr)
        return SparseMatrixCsr(n, row_ptr, c, summed)

    @staticmethod
    def from_dense(dense):
        """Build from a dense array, keeping exactly the nonzero entries."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise DimensionMismatchError("dense input must be square")
        rows, cols = np.nonzero(dense)
        return SparseMatrixCsr.from_coo(dense.shape[0], rows, cols, dense[rows, cols])

    @staticmethod
    def identity(n):
        idx = np.arange(n, dtype=np.int64)
        return SparseMatrixCsr(n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    # -- views ----------------------------------------------------------

    @property
    def nnz(self):
        return len(self.values)

    def row_indices(self):
        """Row index of every stored entry (CSR expansion)."""
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.row_ptr))

    def to_dense(self):
        out = np.zeros((self.n, self.n))
        out[self.row_indices(), self.col_idx] = self.values
        return out

    def diagonal(self):
        """Diagonal as a dense vector; entries absent from the pattern are 0."""
        d = np.zeros(self.n)
        rows = self.row_indices()
        on_diag = rows == self.col_idx
        d[rows[on_diag]] = self.values[on_diag]
        return d

    def has_full_diagonal(self):
        rows = self.row_indices()
        return np.count_nonzero(rows == self.col_idx) == self.n

    def is_symmetric(self):
        """True when every stored (i, j, v) has a stored (j, i, v), values equal
        to the bit."""
        rows = self.row_indices()
        mine = np.lexsort((self.col_idx, rows))
        theirs = np.lexsort((rows, self.col_idx))
        return (
            np.array_equal(rows[mine], self.col_idx[theirs])
            and np.array_equal(self.col_idx[mine], rows[theirs])
            and np.array_equal(self.values[mine], self.values[theirs])
        )

    def strict_lower(self):
        """Strictly-lower-triangular part as a new CSR matrix."""
        rows = self.row_indices()
        keep = rows > self.col_idx
        return SparseMatrixCsr.from_coo(self.n, rows[keep], self.col_idx[keep], self.values[keep])

    def submatrix(self, keep):
        """Symmetric restriction to the (sorted, unique) index set ``keep``."""
        keep = np.asarray(keep, dtype=np.int64)
        remap = -np.ones(self.n, dtype=np.int64)
        remap[keep] = np.arange(len(keep), dtype=np.int64)
        rows = remap[self.row_indices()]
        cols = remap[self.col_idx]
        sel = (rows >= 0) & (cols >= 0)
        return SparseMatrixCsr.from_coo(len(keep), rows[sel], cols[sel], self.values[sel])

    def scaled(self, factor):
        return SparseMatrixCsr(self.n, self.row_ptr, self.col_idx, self.values * factor)


@dataclass(frozen=True)
class LowerFactor:
    """Unit-lower LDL^T factor: P = (I + L) D (I + L)^T.

    ``strict_lower`` holds only entries with row > column; the unit diagonal
    is implicit. ``diag`` must be strictly positive, which makes P SPD for any
    finite L.
    """

    n: int
    strict_lower: SparseMatrixCsr
    diag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "diag", np.ascontiguousarray(self.diag, dtype=np.float64))
        if self.strict_lower.n != self.n or self.diag.shape != (self.n,):
            raise DimensionMismatchError("factor parts disagree on dimension")
        sl = self.strict_lower
        if sl.nnz and not np.all(sl.row_indices() > sl.col_idx):
            raise InvalidFactorError("strict_lower must only hold entries below the diagonal")
        if not np.all(np.isfinite(self.diag)) or np.any(self.diag <= 0):
            raise InvalidFactorError("diagonal must be finite and strictly positive")
        if sl.nnz and not np.all(np.isfinite(sl.values)):
            raise InvalidFactorError("factor values must be finite")

    @property
    def nnz_lower(self):
        return self.strict_lower.nnz

    def unit_lower_dense(self):
        return np.eye(self.n) + self.strict_lower.to_dense()

    def to_dense(self):
        """Densified P = (I+L) D (I+L)^T."""
        b = self.unit_lower_dense()
        return (b * self.diag) @ b.T


# ---------------------------------------------------------------------------
# compiled kernels (numba is used purely as a compiler; the algorithms are
# the textbook sequential ones and are bitwise deterministic)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _spmv_kernel(row_ptr, col_idx, values, x, out):
    for i in range(len(out)):
        acc = 0.0
        for p in range(row_ptr[i], row_ptr[i + 1]):
            acc += values[p] * x[col_idx[p]]
        out[i] = acc


@njit(cache=True)
def _forward_solve_unit(row_ptr, col_idx, values, rhs, out):
    # (I + L) z = rhs, rows ascending; L strictly lower in CSR.
    for i in range(len(out)):
        acc = rhs[i]
        for p in range(row_ptr[i], row_ptr[i + 1]):
            acc -= values[p] * out[col_idx[p]]
        out[i] = acc


@njit(cache=True)
def _backward_solve_unit_t(row_ptr, col_idx, values, out):
    # (I + L)^T z = y in place: once row i is final, scatter its couplings
    # back into the earlier unknowns.
    for i in range(len(out) - 1, -1, -1):
        zi = out[i]
        for p in range(row_ptr[i], row_ptr[i + 1]):
            out[col_idx[p]] -= values[p] * zi


def warm_up_kernels():
    """Force JIT compilation of the tiny kernels (used by timing-sensitive tests)."""
    a = SparseMatrixCsr.identity(2)
    spmv(a, np.ones(2))
    f = LowerFactor(2, SparseMatrixCsr.from_coo(2, [1], [0], [0.5]), np.array([1.0, 2.0]))
    ldlt_apply_inverse(f, np.ones(2))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def spmv(A: SparseMatrixCsr, x: np.ndarray) -> np.ndarray:
    """y = A x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (A.n,):
        raise DimensionMismatchError(f"x has shape {x.shape}, expected ({A.n},)")
    out = np.empty(A.n)
    _spmv_kernel(A.row_ptr, A.col_idx, A.values, x, out)
    return out


def ldlt_apply_inverse(F: LowerFactor, r: np.ndarray) -> np.ndarray:
    """Solve (I+L) D (I+L)^T z = r by forward solve, diagonal scale, backward solve."""
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.shape != (F.n,):
        raise DimensionMismatchError(f"rhs has shape {r.shape}, expected ({F.n},)")
    sl = F.strict_lower
    z = np.empty(F.n)
    _forward_solve_unit(sl.row_ptr, sl.col_idx, sl.values, r, z)
    z /= F.diag
    _backward_solve_unit_t(sl.row_ptr, sl.col_idx, sl.values, z)
    return z


def ldlt_apply(F: LowerFactor, x: np.ndarray) -> np.ndarray:
    """Multiply y = (I+L) D (I+L)^T x without forming the product matrix."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (F.n,):
        raise DimensionMismatchError(f"x has shape {x.shape}, expected ({F.n},)")
    sl = F.strict_lower
    rows = sl.row_indices()
    t = x.copy()
    if sl.nnz:
        np.add.at(t, sl.col_idx, sl.values * x[rows])  # (I+L)^T x
    t *= F.diag
    y = t.copy()
    if sl.nnz:
        np.add.at(y, rows, sl.values * t[sl.col_idx])  # (I+L) (D t)
    return y


def dense_cholesky(A: np.ndarray) -> LowerFactor:
    """Exact LDL^T of a dense SPD matrix (unit-lower L, no pivoting).

    Only the lower triangle of ``A`` is read. Raises NotSpdError with the
    failing pivot index when a pivot is not strictly positive. Intended as a
    small-instance oracle, hence the hard n <= 4096 budget.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError("input must be a square matrix")
    n = A.shape[0]
    if n > DENSE_BUDGET:
        raise DenseBudgetError(f"n={n} exceeds the dense factorization budget {DENSE_BUDGET}")
    work = np.tril(A).copy()
    diag = np.empty(n)
    for j in range(n):
        d = work[j, j]
        if not np.isfinite(d) or d <= 0.0:
            raise NotSpdError(f"nonpositive pivot {d!r} at index {j}", pivot=j)
        diag[j] = d
        if j + 1 < n:
            below = work[j + 1 :, j].copy()
            col = below / d
            work[j + 1 :, j] = col
            # rank-1 update; the upper trailing part receives (symmetric)
            # values too, but only the lower triangle is ever read.
            work[j + 1 :, j + 1 :] -= np.outer(col, below)
    rows, cols = np.tril_indices(n, k=-1)
    vals = work[rows, cols]
    keep = vals != 0.0
    sl = SparseMatrixCsr.from_coo(n, rows[keep], cols[keep], vals[keep])
    return LowerFactor(n, sl, diag)


def ldlt_explicit(F: LowerFactor) -> SparseMatrixCsr:
    """(I+L) D (I+L)^T assembled as a sparse symmetric matrix.

    P = sum_k d_k * b_k b_k^T over the sparse columns b_k of B = I+L, so the
    result carries P's full structural fill without any dense intermediate.
    """
    sl = F.strict_lower
    rows = sl.row_indices()
    col_order = np.lexsort((rows, sl.col_idx))
    sorted_cols = sl.col_idx[col_order]
    starts = np.searchsorted(sorted_cols, np.arange(F.n))
    ends = np.searchsorted(sorted_cols, np.arange(F.n), side="right")
    out_i, out_j, out_v = [], [], []
    for k in range(F.n):
        sel = col_order[starts[k] : ends[k]]
        support = np.concatenate(([k], rows[sel]))
        coeff = np.concatenate(([1.0], sl.values[sel]))
        block = F.diag[k] * np.outer(coeff, coeff)
        ii, jj = np.meshgrid(support, support, indexing="ij")
        out_i.append(ii.ravel())
        out_j.append(jj.ravel())
        out_v.append(block.ravel())
    return SparseMatrixCsr.from_coo(
        F.n, np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_v)
    )


def frobenius_sq_diff(F: LowerFactor, A: SparseMatrixCsr) -> float:
    """|| (I+L) D (I+L)^T - A ||_F^2 on the union of both sparsity patterns.

    The union pattern contains all structural fill of the product, so this
    equals the dense squared Frobenius norm while never densifying.
    """
    if F.n != A.n:
        raise DimensionMismatchError("factor and matrix disagree on dimension")
    P = ldlt_explicit(F)
    rows = np.concatenate([P.row_indices(), A.row_indices()])
    cols = np.concatenate([P.col_idx, A.col_idx])
    vals = np.concatenate([P.values, -A.values])
    diff = SparseMatrixCsr.from_coo(A.n, rows, cols, vals)
    return float(np.dot(diff.values, diff.values))
