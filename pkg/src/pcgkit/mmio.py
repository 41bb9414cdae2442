"""Matrix Market text exchange.

Matrices travel as ``matrix coordinate real symmetric`` (1-based indices,
lower triangle stored) or ``... general`` (all entries stored); vectors as
``matrix array real general`` with n rows and one column. Values are written
with 17 significant digits so float64 round-trips exactly. Comment lines
start with '%'.
"""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError
from .sparse import SparseMatrixCsr

_COORD_HEADER = "%%MatrixMarket matrix coordinate real"
_ARRAY_HEADER = "%%MatrixMarket matrix array real general"


def _fmt(x: float) -> str:
    return "%.17g" % x


def matrix_to_text(A: SparseMatrixCsr, symmetric: bool = True) -> str:
    """Serialize a square sparse matrix.

    With ``symmetric=True`` only entries on or below the diagonal are stored
    and the matrix must actually be symmetric.
    """
    rows = A.row_indices()
    cols = A.col_idx
    vals = A.values
    if symmetric:
        if not A.is_symmetric():
            raise DataFormatError("symmetric output requested for an asymmetric matrix")
        keep = rows >= cols
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        kind = "symmetric"
    else:
        kind = "general"
    lines = [f"{_COORD_HEADER} {kind}", f"{A.n} {A.n} {len(vals)}"]
    lines.extend(f"{i + 1} {j + 1} {_fmt(v)}" for i, j, v in zip(rows, cols, vals))
    return "\n".join(lines) + "\n"


def matrix_from_text(text: str) -> SparseMatrixCsr:
    lines = [ln.strip() for ln in text.splitlines()]
    if not lines or not lines[0].startswith("%%MatrixMarket"):
        raise DataFormatError("missing MatrixMarket header")
    header = lines[0].split()
    if header[1:4] != ["matrix", "coordinate", "real"] or header[4] not in ("symmetric", "general"):
        raise DataFormatError(f"unsupported header: {lines[0]!r}")
    symmetric = header[4] == "symmetric"
    body = [ln for ln in lines[1:] if ln and not ln.startswith("%")]
    if not body:
        raise DataFormatError("missing size line")
    try:
        m, n, nnz = (int(tok) for tok in body[0].split())
    except ValueError as exc:
        raise DataFormatError(f"bad size line: {body[0]!r}") from exc
    if m != n:
        raise DataFormatError("only square matrices are supported")
    entries = body[1:]
    if len(entries) != nnz:
        raise DataFormatError(f"expected {nnz} entries, found {len(entries)}")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    for k, ln in enumerate(entries):
        toks = ln.split()
        if len(toks) != 3:
            raise DataFormatError(f"bad entry line: {ln!r}")
        try:
            i, j, v = int(toks[0]), int(toks[1]), float(toks[2])
        except ValueError as exc:
            raise DataFormatError(f"bad entry line: {ln!r}") from exc
        if not (1 <= i <= n and 1 <= j <= n):
            raise DataFormatError(f"index out of range on line: {ln!r}")
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
    if symmetric:
        if np.any(rows < cols):
            raise DataFormatError("symmetric file stores an above-diagonal entry")
        off = rows != cols
        mirrored_rows = np.concatenate([rows, cols[off]])
        mirrored_cols = np.concatenate([cols, rows[off]])
        vals = np.concatenate([vals, vals[off]])
        rows, cols = mirrored_rows, mirrored_cols
    return SparseMatrixCsr.from_coo(n, rows, cols, vals)


def vector_to_text(v: np.ndarray) -> str:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DataFormatError("only 1-D vectors are supported")
    lines = [_ARRAY_HEADER, f"{len(v)} 1"]
    lines.extend(_fmt(x) for x in v)
    return "\n".join(lines) + "\n"


def vector_from_text(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines()]
    if not lines or lines[0].split() != _ARRAY_HEADER.split():
        raise DataFormatError("missing array-format header")
    body = [ln for ln in lines[1:] if ln and not ln.startswith("%")]
    if not body:
        raise DataFormatError("missing size line")
    try:
        m, ncols = (int(tok) for tok in body[0].split())
    except ValueError as exc:
        raise DataFormatError(f"bad size line: {body[0]!r}") from exc
    if ncols != 1:
        raise DataFormatError("only single-column vectors are supported")
    if len(body) - 1 != m:
        raise DataFormatError(f"expected {m} values, found {len(body) - 1}")
    try:
        return np.array([float(ln) for ln in body[1:]])
    except ValueError as exc:
        raise DataFormatError("non-numeric vector entry") from exc


def save_matrix(path, A: SparseMatrixCsr, symmetric: bool = True) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(matrix_to_text(A, symmetric=symmetric))


def load_matrix(path) -> SparseMatrixCsr:
    with open(path, encoding="ascii") as fh:
        return matrix_from_text(fh.read())


def save_vector(path, v: np.ndarray) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(vector_to_text(v))


def load_vector(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        return vector_from_text(fh.read())
