"""End-to-end acceptance gate: eleven numbered criteria, one test each.

Every test prints a ``criterion N: PASS/FAIL`` line (repeated in the terminal
summary). The model-backed criteria (5-10) share two session-scoped trained
models, so a full run trains exactly twice -- roughly ten minutes per model
here; export PCGKIT_ACCEPT_CACHE=<dir> to reuse checkpoints across runs.

Wall-clock budgets are asserted with generous desk-scale limits; they exist
to catch accidental complexity blowups, not to benchmark the machine.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from pcgkit import autodiff as ad
from pcgkit import gnn, train
from pcgkit.bench import parameter_sigma, preconditioned_condition_number, run_benchmark
from pcgkit.eigen import condition_number_dense
from pcgkit.fem import DatasetTuple, generate_dataset, save_dataset, train_test_split
from pcgkit.fixtures import (CHECK_HYPER, HEAT_HYPER, disk_dataset_config,
                             heat_dataset_config, poisson_dataset_config)
from pcgkit.pcg import SolveOptions, pcg_solve
from pcgkit.preconditioners import VALID_KINDS, build
from pcgkit.sparse import dense_cholesky, ldlt_explicit, spmv

from util_matrices import random_spd_csr

EVAL_OPTS = SolveOptions(thresholds=(1e-6, 1e-8, 1e-12))


def _iteration_columns(tuples, precond_for, opts=EVAL_OPTS):
    """Per-threshold iteration counts (None where a threshold was missed)."""
    cols = {t: [] for t in opts.thresholds}
    for tup in tuples:
        _, rep = pcg_solve(tup.A, tup.b, precond_for(tup), opts)
        for t in opts.thresholds:
            cols[t].append(rep.iterations_to.get(t))
    return cols


def _median(col):
    assert all(v is not None for v in col), "an instance missed the threshold"
    return float(np.median(col))


# ---------------------------------------------------------------------------
# 1. positive definiteness by construction
# ---------------------------------------------------------------------------


def test_criterion_1_spd_for_random_weights(fixture_systems, record_criterion):
    """Untrained (randomly initialised) models must already emit SPD
    preconditioners on every fixture: factor them densely and let any
    non-positive pivot raise."""
    start = time.perf_counter()
    checked = 0
    for seed in range(100):
        model = gnn.create_model(HEAT_HYPER, seed=seed)
        for tup in fixture_systems:
            P = gnn.build_learned(model, tup.A, tup.b)
            dense_cholesky(ldlt_explicit(P.factor).to_dense())
            checked += 1
    elapsed = time.perf_counter() - start
    record_criterion(1, checked == 100 * len(fixture_systems) and elapsed < 120.0,
                     f"{checked} factorizations in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 2. gradients match central finite differences
# ---------------------------------------------------------------------------


def _gradcheck_one(n: int, seed: int) -> tuple[int, int]:
    rng = np.random.default_rng(seed)
    A = random_spd_csr(n, rng, density=0.5 if n <= 8 else 0.3)
    x = rng.standard_normal(n)
    tup = DatasetTuple(A, spmv(A, x), x, {})
    graph = gnn.graph_from_system(A, tup.b)
    model = gnn.create_model(CHECK_HYPER, seed=1000 + seed)
    # A fresh model has zero biases, which parks every ReLU pre-activation
    # within the FD step of its kink (the damped init makes trunk features
    # tiny); there central differences measure the kink, not the subgradient.
    # Jittering the biases makes the check point generic.
    for name in model.parameter_names():
        if name.endswith(".b"):
            model.params[name] += rng.normal(0.0, 0.25, model.params[name].shape)
    config = train.TrainConfig(loss_kind="data")

    loss, fwd = train.tuple_loss(model, graph, tup, config)
    ad.backward(loss)
    eps = 1e-6
    # Central differencing of a float64 loss f carries cancellation noise of
    # about eps_mach*|f|/eps in the quotient; differences below a small
    # multiple of that floor are unresolvable by FD no matter how exact the
    # adjoint is, so they pass on absolute rather than relative terms.
    compared = skipped = 0
    for name in model.parameter_names():
        grad = fwd.param_tensors[name].grad
        if grad is None:
            continue
        flat = grad.ravel()
        store = model.params[name].ravel()
        for i in range(flat.size):
            if abs(flat[i]) <= 1e-8:
                skipped += 1
                continue
            orig = store[i]
            store[i] = orig + eps
            up, _ = train.tuple_loss(model, graph, tup, config)
            store[i] = orig - eps
            dn, _ = train.tuple_loss(model, graph, tup, config)
            store[i] = orig
            fup, fdn = float(up.value), float(dn.value)
            fd = (fup - fdn) / (2 * eps)
            noise = 32 * np.finfo(np.float64).eps * max(abs(fup), abs(fdn)) / (2 * eps)
            err = abs(flat[i] - fd)
            assert err < max(1e-5 * max(abs(flat[i]), abs(fd)), noise), (
                n, seed, name, i, flat[i], fd)
            compared += 1
    return compared, skipped


def test_criterion_2_gradcheck(record_criterion):
    start = time.perf_counter()
    total = 0
    for n in (6, 20):
        for seed in range(20):
            compared, _ = _gradcheck_one(n, seed)
            assert compared > 0
            total += compared
    elapsed = time.perf_counter() - start
    record_criterion(2, elapsed < 300.0,
                     f"{total} parameter derivatives across 40 runs in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 3. solver correctness against dense reference
# ---------------------------------------------------------------------------


def test_criterion_3_pcg_matches_dense_solve(fixture_systems, record_criterion):
    start = time.perf_counter()
    model = gnn.create_model(HEAT_HYPER, seed=3)
    opts = SolveOptions(thresholds=(1e-12,))
    worst = 0.0
    cases = 0
    for tup in fixture_systems:
        if tup.A.n > 200:
            continue
        reference = np.linalg.solve(tup.A.to_dense(), tup.b)
        scale = np.max(np.abs(reference))
        for kind in sorted(VALID_KINDS):
            P = (gnn.build_learned(model, tup.A, tup.b) if kind == "learned"
                 else build(kind, tup.A))
            x, rep = pcg_solve(tup.A, tup.b, P, opts)
            assert rep.iterations_to.get(1e-12) is not None, (tup.meta, kind)
            worst = max(worst, np.max(np.abs(x - reference)) / scale)
            cases += 1
    elapsed = time.perf_counter() - start
    record_criterion(3, worst <= 1e-8 and elapsed < 120.0,
                     f"{cases} solves, worst rel err {worst:.2e}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 4. classic preconditioner quality ordering on the poisson set
# ---------------------------------------------------------------------------


def test_criterion_4_classic_ordering(record_criterion):
    start = time.perf_counter()
    _, test_tuples = train_test_split(generate_dataset(poisson_dataset_config()))
    assert len(test_tuples) == 100
    opts = SolveOptions(thresholds=(1e-10,))
    cols = {kind: _iteration_columns(test_tuples, lambda t, k=kind: build(k, t.A), opts)[1e-10]
            for kind in ("ic2", "ic0", "gauss_seidel", "jacobi")}
    medians = {k: _median(v) for k, v in cols.items()}
    order = ("ic2", "ic0", "gauss_seidel", "jacobi")
    monotone = all(medians[a] <= medians[b] for a, b in zip(order, order[1:]))
    fractions = {f"{a}<={b}": np.mean([x <= y for x, y in zip(cols[a], cols[b])])
                 for a, b in zip(order, order[1:])}
    elapsed = time.perf_counter() - start
    record_criterion(4, monotone and all(f >= 0.9 for f in fractions.values())
                     and elapsed < 300.0,
                     f"medians {medians}, pairwise {fractions}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5. the trained model beats jacobi and symmetric gauss-seidel
# ---------------------------------------------------------------------------


def test_criterion_5_learned_beats_baselines(heat_split, data_twin, record_criterion):
    model, train_seconds = data_twin
    _, test_tuples = heat_split
    assert len(test_tuples) == 50
    learned = _median(_iteration_columns(
        test_tuples, lambda t: gnn.build_learned(model, t.A, t.b))[1e-8])
    jacobi = _median(_iteration_columns(test_tuples, lambda t: build("jacobi", t.A))[1e-8])
    gs = _median(_iteration_columns(test_tuples, lambda t: build("gauss_seidel", t.A))[1e-8])
    budget_ok = train_seconds is None or train_seconds <= 1800.0
    shown = "cached" if train_seconds is None else f"{train_seconds:.0f}s"
    record_criterion(5, learned < jacobi and learned < gs and budget_ok,
                     f"learned {learned} vs jacobi {jacobi} / gauss_seidel {gs}, "
                     f"training {shown}")


# ---------------------------------------------------------------------------
# 6. the solution-aware loss outperforms the matrix-matching loss
# ---------------------------------------------------------------------------


def test_criterion_6_loss_ablation(heat_split, data_twin, naive_twin, record_criterion):
    data_model, _ = data_twin
    naive_model, _ = naive_twin
    _, test_tuples = heat_split
    data_col = _iteration_columns(
        test_tuples, lambda t: gnn.build_learned(data_model, t.A, t.b))[1e-8]
    naive_col = _iteration_columns(
        test_tuples, lambda t: gnn.build_learned(naive_model, t.A, t.b))[1e-8]
    strict = sum(d < n for d, n in zip(data_col, naive_col))
    ok = (_median(data_col) <= _median(naive_col)
          and strict >= 0.6 * len(test_tuples))
    record_criterion(6, ok,
                     f"data {_median(data_col)} vs naive {_median(naive_col)}, "
                     f"strictly fewer on {strict}/{len(test_tuples)}")


# ---------------------------------------------------------------------------
# 7. the preconditioned operator is better conditioned
# ---------------------------------------------------------------------------


def test_criterion_7_condition_number_drops(heat_split, data_twin, record_criterion):
    model, _ = data_twin
    _, test_tuples = heat_split
    start = time.perf_counter()
    wins = 0
    pairs = []
    for tup in test_tuples:
        assert tup.A.n <= 1500
        P = gnn.build_learned(model, tup.A, tup.b)
        kS = preconditioned_condition_number(P, tup.A)
        kA = condition_number_dense(tup.A)
        pairs.append((kA, kS))
        wins += kS < kA
    elapsed = time.perf_counter() - start
    med_a = float(np.median([p[0] for p in pairs]))
    med_s = float(np.median([p[1] for p in pairs]))
    record_criterion(7, wins >= 0.9 * len(test_tuples) and elapsed < 600.0,
                     f"drops on {wins}/{len(test_tuples)}, median "
                     f"{med_a:.1f} -> {med_s:.1f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. out-of-range physics parameters degrade gracefully
# ---------------------------------------------------------------------------


def test_criterion_8_parameter_shift(heat_split, data_twin, record_criterion):
    model, _ = data_twin
    _, base_test = heat_split
    base_cfg = heat_dataset_config()
    sigma = parameter_sigma(base_cfg)
    base_median = _median(_iteration_columns(
        base_test, lambda t: gnn.build_learned(model, t.A, t.b))[1e-8])

    all_converged = True
    medians = {}
    jacobi_far = learned_far = None
    for mult in (1, 3, 5):
        cfg = replace(base_cfg, name=f"{base_cfg.name}-shift{mult}",
                      parameter_shift=mult * sigma)
        _, shifted = train_test_split(generate_dataset(cfg))
        cols = _iteration_columns(shifted, lambda t: gnn.build_learned(model, t.A, t.b))
        all_converged &= all(v is not None for v in cols[1e-12])
        medians[mult] = _median(cols[1e-8])
        if mult == 5:
            learned_far = _median(cols[1e-6])
            jacobi_far = _median(_iteration_columns(
                shifted, lambda t: build("jacobi", t.A))[1e-6])
    monotone = base_median <= medians[1] <= medians[3] <= medians[5]
    record_criterion(8, all_converged and monotone and learned_far < jacobi_far,
                     f"medians {base_median} -> {medians}, 5-sigma@1e-6 "
                     f"learned {learned_far} vs jacobi {jacobi_far}")


# ---------------------------------------------------------------------------
# 9. transfer to an unseen geometry
# ---------------------------------------------------------------------------


def test_criterion_9_disk_transfer(data_twin, record_criterion):
    model, _ = data_twin
    _, disk_test = train_test_split(generate_dataset(disk_dataset_config()))
    cols = _iteration_columns(disk_test, lambda t: gnn.build_learned(model, t.A, t.b))
    jacobi = _median(_iteration_columns(disk_test, lambda t: build("jacobi", t.A))[1e-8])
    converged = all(v is not None for v in cols[1e-12])
    learned = _median(cols[1e-8])
    record_criterion(9, converged and learned < jacobi,
                     f"{len(disk_test)} disk systems (n={disk_test[0].A.n}), "
                     f"learned {learned} vs jacobi {jacobi}")


# ---------------------------------------------------------------------------
# 10. predicted initial guesses never hurt much, usually help
# ---------------------------------------------------------------------------


def test_criterion_10_initial_guess(heat_split, data_twin, record_criterion):
    model, _ = data_twin
    _, test_tuples = heat_split
    zero_col, warm_col = [], []
    for tup in test_tuples:
        P = gnn.build_learned(model, tup.A, tup.b)
        x0 = gnn.predict_x0(model, gnn.graph_from_system(tup.A, tup.b))
        _, zero = pcg_solve(tup.A, tup.b, P, EVAL_OPTS)
        _, warm = pcg_solve(tup.A, tup.b, P, replace(EVAL_OPTS, x0=x0))
        zero_col.append(zero.iterations_to[1e-8])
        warm_col.append(warm.iterations_to[1e-8])
    helped = sum(w <= z for w, z in zip(warm_col, zero_col))
    mz, mw = _median(zero_col), _median(warm_col)
    record_criterion(10, helped >= 0.7 * len(test_tuples) and mw <= 1.1 * mz,
                     f"warm <= zero on {helped}/{len(test_tuples)}, medians "
                     f"warm {mw} vs zero {mz}")


# ---------------------------------------------------------------------------
# 11. bit-for-bit reproducibility
# ---------------------------------------------------------------------------


def _dir_bytes(root):
    import os
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            p = os.path.join(base, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_criterion_11_determinism(tmp_path, record_criterion):
    cfg = replace(heat_dataset_config(seed=5), mesh_spec={"shape": "square", "k": 6},
                  n_trajectories=2, steps=3, n_test_trajectories=1)

    trajs = []
    for tag in ("a", "b"):
        trajs.append(generate_dataset(cfg, out_dir=tmp_path / f"ds_{tag}"))
    datasets_equal = _dir_bytes(tmp_path / "ds_a") == _dir_bytes(tmp_path / "ds_b")

    train_tuples, _ = train_test_split(trajs[0])
    ckpts = []
    for tag in ("a", "b"):
        model = gnn.create_model(CHECK_HYPER, seed=2)
        model, _ = train.train(model, train_tuples,
                               train.TrainConfig(loss_kind="data", epochs=2,
                                                 batch_size=4, seed=3))
        path = tmp_path / f"ckpt_{tag}.json"
        gnn.save_model(path, model)
        ckpts.append(path.read_bytes())
    checkpoints_equal = ckpts[0] == ckpts[1]

    tuples = train_tuples[:3]
    runs = [run_benchmark(tuples, ["jacobi", "ic0"], EVAL_OPTS, task="det",
                          repetitions=1) for _ in range(2)]
    columns_equal = ([r.iterations_to for r in runs[0]]
                     == [r.iterations_to for r in runs[1]])

    record_criterion(11, datasets_equal and checkpoints_equal and columns_equal,
                     f"datasets={datasets_equal} checkpoints={checkpoints_equal} "
                     f"iteration columns={columns_equal}")
