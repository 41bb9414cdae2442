"""Preconditioned conjugate gradients with multi-threshold reporting.

The solver records, for every requested residual threshold, the first
iteration (and wall time) at which it was crossed. Convergence is measured on
the relative residual ||r_k||/||b|| by default; an absolute mode is available.
Before declaring the tightest threshold met, the residual is recomputed from
scratch — if the recurrence has drifted, the solve continues from the true
residual instead of returning an optimistic report.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import BreakdownError, DimensionMismatchError
from .sparse import SparseMatrixCsr, spmv

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12)


@dataclass(frozen=True)
class SolveOptions:
    thresholds: tuple = DEFAULT_THRESHOLDS
    max_iter: int | None = None  # defaults to 10*n at solve time
    x0: np.ndarray | None = None
    absolute: bool = False  # measure ||r|| instead of ||r||/||b||

    def __post_init__(self):
        ts = tuple(float(t) for t in self.thresholds)
        object.__setattr__(self, "thresholds", ts)
        if not ts:
            raise DimensionMismatchError("at least one threshold required")
        if any(not (0.0 < t < 1.0) for t in ts):
            raise DimensionMismatchError("thresholds must lie in (0, 1)")
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise DimensionMismatchError("thresholds must be strictly decreasing")
        if self.max_iter is not None and self.max_iter < 1:
            raise DimensionMismatchError("max_iter must be at least 1")


@dataclass
class SolveReport:
    thresholds: tuple
    iterations_to: dict  # threshold -> first iteration crossing it (or absent)
    seconds_to: dict  # threshold -> elapsed seconds at that crossing
    final_relative_residual: float
    converged: bool
    history: list = field(default_factory=list)  # ||r_k||_2, one entry per iterate
    iterations: int = 0

    def at(self, threshold: float):
        """(iterations, seconds) for one threshold, or None if never crossed."""
        if threshold in self.iterations_to:
            return self.iterations_to[threshold], self.seconds_to[threshold]
        return None


class _Identity:
    kind = "identity"

    @staticmethod
    def apply_inverse(r):
        return r.copy()


IDENTITY_PRECONDITIONER = _Identity()


def pcg_solve(A: SparseMatrixCsr, b, P=None, opts: SolveOptions | None = None):
    """Solve A x = b with preconditioned CG; returns (x, SolveReport).

    ``P`` is anything with ``apply_inverse(r) -> z`` (None means identity).
    Raises BreakdownError when p'Ap <= 0, which signals a non-SPD matrix or an
    invalid preconditioner. A zero right-hand side returns the zero vector
    immediately with zero iterations.
    """
    opts = opts or SolveOptions()
    P = P if P is not None else IDENTITY_PRECONDITIONER
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise DimensionMismatchError(f"rhs length {b.shape} does not match n={A.n}")
    max_iter = opts.max_iter if opts.max_iter is not None else 10 * A.n
    smallest = opts.thresholds[-1]

    start = time.perf_counter()
    iterations_to: dict = {}
    seconds_to: dict = {}

    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        for t in opts.thresholds:
            iterations_to[t] = 0
            seconds_to[t] = time.perf_counter() - start
        return np.zeros(A.n), SolveReport(opts.thresholds, iterations_to, seconds_to,
                                          0.0, True, [0.0], 0)
    scale = 1.0 if opts.absolute else norm_b

    if opts.x0 is not None:
        x = np.array(opts.x0, dtype=np.float64)
        if x.shape != (A.n,):
            raise DimensionMismatchError("x0 length does not match n")
        r = b - spmv(A, x)
    else:
        x = np.zeros(A.n)
        r = b.copy()

    history = [float(np.linalg.norm(r))]
    rel = history[0] / scale

    def record(k, value):
        for t in opts.thresholds:
            if t not in iterations_to and value <= t:
                iterations_to[t] = k
                seconds_to[t] = time.perf_counter() - start

    if rel <= smallest:
        record(0, rel)
        return x, SolveReport(opts.thresholds, iterations_to, seconds_to, rel, True,
                              history, 0)
    record(0, rel)

    z = P.apply_inverse(r)
    p = z.copy()
    rz = float(r @ z)
    converged = False
    k = 0
    while k < max_iter:
        k += 1
        Ap = spmv(A, p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise BreakdownError(
                f"p'Ap = {pAp:.3e} at iteration {k}: matrix not SPD or preconditioner invalid"
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rn = float(np.linalg.norm(r))
        history.append(rn)
        rel = rn / scale
        if rel <= smallest:
            # confirm against the from-scratch residual before declaring victory
            r_true = b - spmv(A, x)
            rel_true = float(np.linalg.norm(r_true)) / scale
            if rel_true <= smallest:
                record(k, max(rel, rel_true))
                rel = rel_true
                converged = True
                break
            log.debug("residual drift at iteration %d (recurrence %.3e, true %.3e); restarting",
                      k, rel, rel_true)
            record(k, rel_true)
            r = r_true
            history[-1] = float(np.linalg.norm(r))
            rel = rel_true
            z = P.apply_inverse(r)
            p = z.copy()
            rz = float(r @ z)
            continue
        record(k, rel)
        z = P.apply_inverse(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new

    if not converged:
        rel = float(np.linalg.norm(b - spmv(A, x))) / scale
    return x, SolveReport(opts.thresholds, iterations_to, seconds_to, rel, converged,
                          history, k)
