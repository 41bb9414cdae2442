"""Benchmark harness: timed preconditioner builds, multi-threshold solves,
condition numbers of the preconditioned operator, and distribution-shift
sweeps, plus CSV/markdown table emission.

Timing policy: every (tuple, method) cell is built and solved ``repetitions``
times on a monotonic clock and the minimum is reported, which has far lower
variance than a mean on a desktop under load. Iteration counts are
deterministic and identical across repetitions and worker counts; timings are
advisory.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import gnn
from .eigen import condition_number_dense, condition_number_from_dense
from .errors import DataFormatError, DenseBudgetError, DimensionMismatchError
from .fem import DatasetConfig, generate_dataset, train_test_split
from .pcg import DEFAULT_THRESHOLDS, SolveOptions, pcg_solve
from .preconditioners import VALID_KINDS, FactorPreconditioner, build

COND_BUDGET = 1500


@dataclass(frozen=True)
class BenchmarkRecord:
    """One (tuple, method) measurement. ``iterations_to``/``seconds_to`` are
    aligned with ``thresholds``; None marks a threshold that was never
    crossed. Condition numbers are None unless they were requested."""

    task: str
    method: str
    precompute_seconds: float
    thresholds: tuple
    iterations_to: tuple
    seconds_to: tuple
    kappa_original: float | None = None
    kappa_preconditioned: float | None = None
    converged: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.thresholds)
        if len(self.iterations_to) != k or len(self.seconds_to) != k:
            raise DimensionMismatchError("per-threshold columns must match thresholds")
        if self.precompute_seconds < 0 or any(
            s is not None and s < 0 for s in self.seconds_to
        ):
            raise DimensionMismatchError("timings cannot be negative")
        for kappa in (self.kappa_original, self.kappa_preconditioned):
            if kappa is not None and not kappa >= 1.0:
                raise DimensionMismatchError(f"condition number {kappa} < 1")


def _resolve_method(method):
    """A method is a classic kind name, a trained model, or a checkpoint path.

    Returns (name, builder) with builder(A, b) -> preconditioner.
    """
    if isinstance(method, gnn.GnnModel):
        return "learned", lambda A, b: gnn.build_learned(method, A, b)
    if isinstance(method, str) and method in VALID_KINDS - {"learned"}:
        return method, lambda A, b: build(method, A)
    # anything else is treated as a path to a model checkpoint
    model = gnn.load_model(method)
    return "learned", lambda A, b: gnn.build_learned(model, A, b)


def preconditioned_condition_number(P: FactorPreconditioner, A) -> float:
    """Condition number of S = D^{-1/2} (I+L')^{-1} A (I+L')^{-T} D^{-1/2},
    the symmetric similarity of P^{-1} A. Dense, so n is capped."""
    if A.n > COND_BUDGET:
        raise DenseBudgetError(
            f"condition numbers are limited to n <= {COND_BUDGET} (got {A.n})")
    B = np.eye(A.n) + P.factor.strict_lower.to_dense()
    half = np.linalg.solve(B, A.to_dense())  # B^{-1} A
    S = np.linalg.solve(B, half.T).T  # B^{-1} A B^{-T}
    root = 1.0 / np.sqrt(P.factor.diag)
    S = root[:, None] * S * root[None, :]
    return condition_number_from_dense(S)


def _measure_cell(tup, name, builder, opts, repetitions, kappa_A):
    best_build = np.inf
    P = None
    for _ in range(repetitions):
        t0 = time.perf_counter()
        P = builder(tup.A, tup.b)
        best_build = min(best_build, time.perf_counter() - t0)

    report = None
    best_seconds = {}
    for _ in range(repetitions):
        _, report = pcg_solve(tup.A, tup.b, P, opts)
        for t, s in report.seconds_to.items():
            if t not in best_seconds or s < best_seconds[t]:
                best_seconds[t] = s

    kappa_P = None
    if kappa_A is not None:
        kappa_P = preconditioned_condition_number(P, tup.A)
    return BenchmarkRecord(
        task="",
        method=name,
        precompute_seconds=best_build,
        thresholds=opts.thresholds,
        iterations_to=tuple(report.iterations_to.get(t) for t in opts.thresholds),
        seconds_to=tuple(best_seconds.get(t) for t in opts.thresholds),
        kappa_original=kappa_A,
        kappa_preconditioned=kappa_P,
        converged=report.converged,
        meta=dict(tup.meta),
    )


def run_benchmark(tuples, methods, opts: SolveOptions | None = None, *,
                  task: str = "", repetitions: int = 5, workers: int = 1,
                  condition_numbers: bool = False) -> list:
    """Benchmark every method on every tuple; one record per cell.

    Non-convergent solves are recorded with converged=False, never dropped.
    Cells may be dispatched to a thread pool, but results keep (tuple, method)
    order and iteration columns do not depend on ``workers``.
    """
    if repetitions < 1 or workers < 1:
        raise DimensionMismatchError("repetitions and workers must be >= 1")
    opts = opts or SolveOptions()
    resolved = [_resolve_method(m) for m in methods]

    kappas = [None] * len(tuples)
    if condition_numbers:
        kappas = [condition_number_dense(t.A) if t.A.n <= COND_BUDGET else None
                  for t in tuples]

    jobs = [(tup, name, builder, kappas[i])
            for i, tup in enumerate(tuples) for name, builder in resolved]

    def run_job(job):
        tup, name, builder, kappa_A = job
        return _measure_cell(tup, name, builder, opts, repetitions, kappa_A)

    if workers == 1:
        records = [run_job(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_job, jobs))
    return [replace(r, task=task) for r in records]


def aggregate(records) -> dict:
    """Median and mean over the test set, grouped by (task, method).

    Unreached thresholds enter the statistics as +inf, so a method that fails
    on more than half the tuples gets an infinite median rather than a
    flattering one computed from survivors only.
    """
    groups: dict = {}
    for r in records:
        groups.setdefault((r.task, r.method), []).append(r)
    out = {}
    for key, recs in sorted(groups.items()):
        thresholds = recs[0].thresholds
        iters = np.array([[np.inf if it is None else it for it in r.iterations_to]
                          for r in recs])
        secs = np.array([[np.inf if s is None else s for s in r.seconds_to]
                         for r in recs])
        out[key] = {
            "count": len(recs),
            "converged": sum(r.converged for r in recs),
            "thresholds": thresholds,
            "median_iterations": tuple(np.median(iters, axis=0)),
            "mean_iterations": tuple(np.mean(iters, axis=0)),
            "median_seconds": tuple(np.median(secs, axis=0)),
            "mean_seconds": tuple(np.mean(secs, axis=0)),
            "median_precompute": float(np.median([r.precompute_seconds for r in recs])),
        }
    return out


def parameter_sigma(cfg: DatasetConfig) -> float:
    """Standard deviation of the physics parameter's training distribution
    (uniform on a range: (hi - lo) / sqrt(12))."""
    lo, hi = cfg.wave_speed_range if cfg.kind == "wave" else cfg.alpha_range
    return (hi - lo) / np.sqrt(12.0)


def generalization_sweep(model, base_config: DatasetConfig, shifts,
                         opts: SolveOptions | None = None, *,
                         baselines=("jacobi",), repetitions: int = 1,
                         condition_numbers: bool = False) -> dict:
    """Benchmark a fixed trained model on test sets whose physics parameter is
    shifted by the given multiples of the training distribution's sigma.

    Returns {shift: records}; shift 0 reproduces the in-distribution set.
    """
    sigma = parameter_sigma(base_config)
    out = {}
    for m in shifts:
        cfg = replace(base_config,
                      name=f"{base_config.name}-shift{format(float(m), 'g')}",
                      parameter_shift=float(m) * sigma)
        _, test = train_test_split(generate_dataset(cfg))
        if not test:
            raise DataFormatError(f"config {cfg.name} has no test split")
        out[m] = run_benchmark(
            test, [model, *baselines], opts, task=cfg.name,
            repetitions=repetitions, condition_numbers=condition_numbers)
    return out


# ---------------------------------------------------------------------------
# table emission
# ---------------------------------------------------------------------------


def _columns(thresholds) -> list:
    cols = ["task", "method", "precompute_s"]
    for t in thresholds:
        cols += [f"time_s@{format(t, 'g')}", f"iters@{format(t, 'g')}"]
    return cols + ["kappa_A", "kappa_P"]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _rows(records, thresholds):
    for r in records:
        if r.thresholds != thresholds:
            raise DimensionMismatchError("records in one table must share thresholds")
        row = [r.task, r.method, _cell(r.precompute_seconds)]
        for s, it in zip(r.seconds_to, r.iterations_to):
            row += [_cell(s), _cell(it)]
        row += [_cell(r.kappa_original), _cell(r.kappa_preconditioned)]
        yield row


def emit_tables(records, format: str = "csv") -> str:
    """Render records as CSV (machine-readable, exact floats) or markdown."""
    thresholds = records[0].thresholds if records else DEFAULT_THRESHOLDS
    header = _columns(thresholds)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(_rows(records, thresholds))
        return buf.getvalue()
    if format == "markdown":
        lines = ["| " + " | ".join(header) + " |",
                 "| " + " | ".join("---" for _ in header) + " |"]
        for row in _rows(records, thresholds):
            lines.append("| " + " | ".join(c if c else "-" for c in row) + " |")
        return "\n".join(lines) + "\n"
    raise DimensionMismatchError(f"unknown table format {format!r}")


def parse_csv(text: str) -> list:
    """Inverse of emit_tables(..., "csv"); converged is inferred from the
    tightest threshold column (that is exactly what the solver's flag means)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataFormatError("empty table")
    header = rows[0]
    if len(header) < 5 or (len(header) - 5) % 2:
        raise DataFormatError("malformed benchmark table header")
    thresholds = tuple(float(name.split("@", 1)[1]) for name in header[3:-2:2])
    records = []
    for row in rows[1:]:
        opt = lambda s, conv: None if s == "" else conv(s)
        seconds = tuple(opt(c, float) for c in row[3:-2:2])
        iters = tuple(opt(c, int) for c in row[4:-2:2])
        records.append(BenchmarkRecord(
            task=row[0], method=row[1], precompute_seconds=float(row[2]),
            thresholds=thresholds, iterations_to=iters, seconds_to=seconds,
            kappa_original=opt(row[-2], float),
            kappa_preconditioned=opt(row[-1], float),
            converged=iters[-1] is not None))
    return records
