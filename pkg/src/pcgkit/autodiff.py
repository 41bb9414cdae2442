"""A small reverse-mode tape over numpy arrays.

Only the operations the preconditioner pipeline needs are provided. Two
properties matter more than generality here:

* determinism — every op gives bitwise-identical results for identical
  inputs, so training runs and checkpoints are reproducible;
* permutation equivariance — ``segment_sum`` orders each segment's addends
  canonically (by segment, then by the full feature row), so relabeling
  graph nodes permutes outputs exactly instead of merely approximately.

Adjoints are checked for finiteness as they are produced; a NaN or infinity
raises NonFiniteAdjointError carrying the index and name of the op that
emitted it.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionMismatchError, NonFiniteAdjointError


class Tensor:
    """A node in the computation graph: value plus accumulated adjoint."""

    __slots__ = ("value", "grad", "tape")

    def __init__(self, value, tape):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape


class _Op:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Records ops during a forward pass; ``backward`` replays them reversed."""

    def __init__(self):
        self.ops = []

    def tensor(self, value) -> Tensor:
        return Tensor(value, self)

    def record(self, name, inputs, out_value, backward) -> Tensor:
        """Register a custom op.

        ``backward(out_grad) -> tuple`` must return one adjoint per input
        (None for entries that are plain arrays or need no gradient).
        """
        out = Tensor(out_value, self)
        self.ops.append(_Op(name, tuple(inputs), out, backward))
        return out


def _tape_of(*args) -> Tape:
    tapes = {a.tape for a in args if isinstance(a, Tensor)}
    if len(tapes) != 1:
        raise DimensionMismatchError("operands must share exactly one tape")
    return tapes.pop()


def _val(a):
    return a.value if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)


def _accumulate(tensor, grad, op_index, op_name):
    if not isinstance(tensor, Tensor) or grad is None:
        return
    # cheap screen first: a non-finite anywhere poisons the sum
    total = float(np.sum(grad))
    if not math.isfinite(total) and not np.all(np.isfinite(grad)):
        raise NonFiniteAdjointError(
            f"non-finite adjoint produced by op #{op_index} ({op_name})",
            op_index=op_index, op_name=op_name)
    tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def backward(loss: Tensor) -> None:
    """Accumulate adjoints of ``loss`` into every upstream tensor's .grad."""
    if loss.value.shape != ():
        raise DimensionMismatchError("backward starts from a scalar")
    loss.grad = np.ones(())
    ops = loss.tape.ops
    for idx in range(len(ops) - 1, -1, -1):
        op = ops[idx]
        if op.output.grad is None:
            continue
        for tensor, grad in zip(op.inputs, op.backward(op.output.grad)):
            _accumulate(tensor, grad, idx, op.name)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def affine(x: Tensor, W, b) -> Tensor:
    """x @ W + b with x of shape (n, f_in).

    Single-column outputs are accumulated column by column instead of going
    through the BLAS mat-vec path: that path computes identical rows
    differently depending on their position (vectorized blocks vs scalar
    tails), which would break exact permutation equivariance. Wider products
    use the matrix-matrix kernel, which is row-stable.
    """
    tape = _tape_of(x, W, b)
    xv, Wv, bv = _val(x), _val(W), _val(b)
    if xv.ndim != 2 or Wv.ndim != 2 or xv.shape[1] != Wv.shape[0] or bv.shape != (Wv.shape[1],):
        raise DimensionMismatchError(
            f"affine shapes incompatible: {xv.shape} @ {Wv.shape} + {bv.shape}")
    if Wv.shape[1] == 1:
        out = np.tile(bv, (xv.shape[0], 1))
        for f in range(xv.shape[1]):
            out += xv[:, f, None] * Wv[f, None, :]
    else:
        out = xv @ Wv + bv

    def back(g):
        return g @ Wv.T, xv.T @ g, g.sum(axis=0)

    return tape.record("affine", (x, W, b), out, back)


def relu(x: Tensor) -> Tensor:
    xv = _val(x)
    mask = xv > 0.0  # subgradient at exactly 0 is 0

    def back(g):
        return (g * mask,)

    return _tape_of(x).record("relu", (x,), np.where(mask, xv, 0.0), back)


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise DimensionMismatchError(f"add shapes differ: {av.shape} vs {bv.shape}")

    def back(g):
        return g, g

    return tape.record("add", (a, b), av + bv, back)


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise DimensionMismatchError(f"sub shapes differ: {av.shape} vs {bv.shape}")

    def back(g):
        return g, -g

    return tape.record("sub", (a, b), av - bv, back)


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise DimensionMismatchError(f"mul shapes differ: {av.shape} vs {bv.shape}")

    def back(g):
        return g * bv, g * av

    return tape.record("mul", (a, b), av * bv, back)


def scale(a: Tensor, c: float) -> Tensor:
    av = _val(a)
    c = float(c)

    def back(g):
        return (g * c,)

    return _tape_of(a).record("scale", (a,), av * c, back)


def concat_features(parts) -> Tensor:
    """Concatenate along axis 1 (the feature axis)."""
    tape = _tape_of(*parts)
    vals = [_val(p) for p in parts]
    widths = [v.shape[1] for v in vals]
    splits = np.cumsum(widths)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=1))

    return tape.record("concat", tuple(parts), np.concatenate(vals, axis=1), back)


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    xv = _val(x)

    def back(g):
        out = np.zeros_like(xv)
        np.add.at(out, idx, g)
        return (out,)

    return _tape_of(x).record("gather_rows", (x,), xv[idx], back)


def segment_sum(x: Tensor, seg_ids, n_segments: int) -> Tensor:
    """Sum rows of x into ``n_segments`` buckets given per-row segment ids.

    Rows are accumulated in a canonical order — sorted by (segment, then the
    full feature row lexicographically) — so the result is invariant to the
    order rows arrive in. Empty segments yield zero rows.
    """
    seg_ids = np.asarray(seg_ids, dtype=np.int64)
    xv = _val(x)
    if xv.ndim != 2 or len(seg_ids) != xv.shape[0]:
        raise DimensionMismatchError("segment_sum expects one segment id per row")
    out = np.zeros((n_segments, xv.shape[1]))
    if xv.shape[0]:
        order = np.lexsort(tuple(xv[:, c] for c in range(xv.shape[1] - 1, -1, -1)) + (seg_ids,))
        sorted_vals = xv[order]
        sorted_seg = seg_ids[order]
        starts = np.r_[0, np.flatnonzero(np.diff(sorted_seg)) + 1]
        out[sorted_seg[starts]] = np.add.reduceat(sorted_vals, starts, axis=0)

    def back(g):
        return (g[seg_ids],)

    return _tape_of(x).record("segment_sum", (x,), out, back)


def flatten(x: Tensor) -> Tensor:
    xv = _val(x)
    shape = xv.shape

    def back(g):
        return (g.reshape(shape),)

    return _tape_of(x).record("flatten", (x,), xv.reshape(-1), back)


def sum_sq(x: Tensor) -> Tensor:
    xv = _val(x)

    def back(g):
        return (2.0 * g * xv,)

    return _tape_of(x).record("sum_sq", (x,), np.array(np.sum(xv * xv)), back)
