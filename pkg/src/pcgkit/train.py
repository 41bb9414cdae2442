"""Losses, end-to-end gradients, Adam, and the training loop.

Two losses over the learned factor P = (I+L') D (I+L')^T with D = diag(A):

* ``loss_naive``  — ||P - A||_F^2, the incomplete-factorization objective;
* ``loss_data``   — ||P x - b||_2^2, which weights the factorization error
  by where solutions actually live; P is never formed, only applied.

Both are differentiable through the whole pipeline (network -> symmetrize ->
assemble -> loss) via the tape in :mod:`pcgkit.autodiff`.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gnn
from .autodiff import Tensor
from .errors import (
    DenseBudgetError,
    DimensionMismatchError,
    DivergenceError,
    NonFiniteGradientError,
)
from .sparse import DENSE_BUDGET, LowerFactor, SparseMatrixCsr, frobenius_sq_diff

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "data"  # "data" or "naive"
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # steps between checkpoints; 0 = final only
    x0_aux_weight: float = 0.1  # weight of the x0-head regression term

    def __post_init__(self):
        if self.loss_kind not in ("data", "naive"):
            raise DimensionMismatchError(f"unknown loss kind {self.loss_kind!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise DimensionMismatchError("bad training configuration")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _lower_pattern(A: SparseMatrixCsr):
    pattern = A.strict_lower()
    return pattern, pattern.row_indices(), pattern.col_idx


def _check_lower(values, nnz):
    shape = values.value.shape if isinstance(values, Tensor) else np.shape(values)
    if shape != (nnz,):
        raise DimensionMismatchError(f"expected {nnz} lower values, got {shape}")


def loss_naive(lower_values, diag, A: SparseMatrixCsr):
    """||(I+L') D (I+L')^T - A||_F^2 over the union sparsity pattern.

    Accepts a Tensor (recorded on its tape, differentiable in the lower
    values) or a plain array (returns a float). The gradient is computed
    densely — 4 (P-A) (I+L') D restricted to the lower slots — so it carries
    the same n <= 4096 budget as the other dense oracles.
    """
    pattern, rows, cols = _lower_pattern(A)
    _check_lower(lower_values, pattern.nnz)
    diag = np.asarray(diag, dtype=np.float64)

    def value_of(lv):
        lower = SparseMatrixCsr(A.n, pattern.row_ptr, pattern.col_idx, lv)
        factor = LowerFactor(A.n, lower, diag)
        return factor, frobenius_sq_diff(factor, A)

    if not isinstance(lower_values, Tensor):
        return value_of(np.asarray(lower_values, dtype=np.float64))[1]

    if A.n > DENSE_BUDGET:
        raise DenseBudgetError(
            f"naive-loss gradient is dense; n={A.n} exceeds budget {DENSE_BUDGET}")
    factor, value = value_of(lower_values.value)

    def back(g):
        B = factor.unit_lower_dense()
        R = factor.to_dense() - A.to_dense()
        G = 4.0 * (R @ B) * diag[None, :]
        return (float(g) * G[rows, cols],)

    return lower_values.tape.record("loss_naive", (lower_values,), np.array(value), back)


def apply_learned_factor(lower_values, diag, x, A: SparseMatrixCsr):
    """y = (I+L') D (I+L')^T x without forming the product matrix.

    Tensor in the lower values; ``diag`` and ``x`` are constants. Three
    sweeps: u = (I+L')^T x, w = D u, y = (I+L') w.
    """
    pattern, rows, cols = _lower_pattern(A)
    _check_lower(lower_values, pattern.nnz)
    diag = np.asarray(diag, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n,) or diag.shape != (A.n,):
        raise DimensionMismatchError("x and diag must have one entry per row")

    def apply_value(lv):
        u = x.copy()
        np.add.at(u, cols, lv * x[rows])
        w = diag * u
        y = w.copy()
        np.add.at(y, rows, lv * w[cols])
        return w, y

    if not isinstance(lower_values, Tensor):
        return apply_value(np.asarray(lower_values, dtype=np.float64))[1]

    lv = lower_values.value
    w, y = apply_value(lv)

    def back(g):
        # y = B w with B = I+L': dL'_ij += g_i w_j, dw = B^T g
        t = g.copy()
        np.add.at(t, cols, lv * g[rows])
        # w = D u, u = B^T x: dL'_ij += x_i (D B^T g)_j
        return (g[rows] * w[cols] + x[rows] * (diag * t)[cols],)

    return lower_values.tape.record("apply_factor", (lower_values,), y, back)


def loss_data(lower_values, diag, x, b, A: SparseMatrixCsr):
    """||(I+L') D (I+L')^T x - b||_2^2, matrix-free."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise DimensionMismatchError("b must have one entry per row")
    y = apply_learned_factor(lower_values, diag, x, A)
    if isinstance(y, Tensor):
        return ad.sum_sq(ad.sub(y, b))
    r = y - b
    return float(r @ r)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, t: int,
              learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update (bias-corrected). ``t`` starts at 1."""
    if t < 1:
        raise DimensionMismatchError("Adam step index starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        params[name] -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def tuple_loss(model: gnn.GnnModel, graph: gnn.GraphData, tup, config: TrainConfig):
    """Forward + loss for one tuple on a fresh tape; returns (loss_tensor, fwd)."""
    fwd = gnn.forward(model, graph)
    lower = gnn.symmetrize_triangulate(fwd.edge_scalars, graph)
    diag = tup.A.diagonal()
    if config.loss_kind == "naive":
        loss = loss_naive(lower, diag, tup.A)
    else:
        loss = loss_data(lower, diag, tup.x, tup.b, tup.A)
    if model.hyper.with_x0_head:
        aux = ad.sum_sq(ad.sub(fwd.node_scalars, tup.x))
        loss = ad.add(loss, ad.scale(aux, config.x0_aux_weight))
    return loss, fwd


def _batch_gradients(model, graphs, tuples, indices, config):
    """Mean loss and mean parameter gradients over one minibatch,
    accumulated in tuple-index order."""
    total_loss = 0.0
    sums: dict = {}
    for i in indices:
        loss, fwd = tuple_loss(model, graphs[i], tuples[i], config)
        ad.backward(loss)
        total_loss += float(loss.value)
        for name, tensor in fwd.param_tensors.items():
            if tensor.grad is None:
                continue
            if name in sums:
                sums[name] += tensor.grad
            else:
                sums[name] = tensor.grad.copy()
    inv = 1.0 / len(indices)
    return total_loss * inv, {k: v * inv for k, v in sums.items()}


def train(model: gnn.GnnModel, tuples, config: TrainConfig, out_dir=None):
    """Minibatch Adam over (A, b, x) tuples; returns (model, loss history).

    The input model is not mutated. History rows are dicts with step, epoch,
    batch_loss and wall_seconds; when ``out_dir`` is given they are also
    written to loss_curve.csv next to the checkpoints. Training aborts with
    DivergenceError if a batch loss exceeds 1e6 x the initial batch loss.
    """
    if not tuples:
        raise DimensionMismatchError("empty training set")
    model = model.copy()
    if config.epochs == 0:
        return model, []
    graphs = [gnn.graph_from_system(t.A, t.b) for t in tuples]
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    history = []
    guard_level = None
    step = 0
    started = time.perf_counter()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for epoch in range(config.epochs):
        order = rng.permutation(len(tuples))
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            loss, grads = _batch_gradients(model, graphs, tuples, batch, config)
            if guard_level is None:
                guard_level = 1e6 * max(loss, 1e-300)
            elif loss > guard_level:
                raise DivergenceError(
                    f"batch loss {loss:.3e} exceeds 1e6 x initial at step {step}")
            step += 1
            adam_step(model.params, grads, state, step, config.learning_rate)
            history.append({"step": step, "epoch": epoch, "batch_loss": loss,
                            "wall_seconds": time.perf_counter() - started})
            if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
                gnn.save_model(os.path.join(out_dir, f"checkpoint_{step:06d}.json"), model)
        log.info("epoch %d done: last batch loss %.6e", epoch, history[-1]["batch_loss"])
    if out_dir is not None:
        gnn.save_model(os.path.join(out_dir, "model_final.json"), model)
        write_loss_curve(os.path.join(out_dir, "loss_curve.csv"), history)
    return model, history


def write_loss_curve(path, history) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "epoch", "batch_loss", "wall_seconds"])
        writer.writeheader()
        writer.writerows(history)
