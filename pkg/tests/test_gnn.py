"""Graph construction, the message-passing network, and factor assembly."""

import time

import numpy as np
import pytest

from pcgkit import gnn
from pcgkit.errors import (
    DataFormatError,
    DimensionMismatchError,
    NotSpdError,
    PcgkitError,
)
from pcgkit.pcg import SolveOptions, pcg_solve
from pcgkit.preconditioners import build_jacobi
from pcgkit.sparse import SparseMatrixCsr, dense_cholesky

from util_matrices import laplacian_5pt, random_spd_csr

SMALL = gnn.GnnHyperParams(l=1, h=8, n_mp=2, l_mp=1, h_mp=8)


def _dense_from_edges(graph, edge_vals):
    out = np.zeros((graph.n_nodes, graph.n_nodes))
    out[graph.edge_src, graph.edge_dst] = edge_vals
    return out


def test_graph_identity_system():
    g = gnn.graph_from_system(SparseMatrixCsr.identity(2), [3.0, 4.0])
    assert g.n_nodes == 2
    np.testing.assert_array_equal(g.node_features, [[3.0], [4.0]])
    np.testing.assert_array_equal(g.edge_src, [0, 1])
    np.testing.assert_array_equal(g.edge_dst, [0, 1])
    np.testing.assert_array_equal(g.edge_features, [[1.0], [1.0]])
    np.testing.assert_array_equal(g.edge_pair_index, [0, 1])  # self-loops


def test_graph_dense_2x2():
    A = SparseMatrixCsr.from_dense(np.array([[2.0, 1.0], [1.0, 3.0]]))
    g = gnn.graph_from_system(A, [0.0, 0.0])
    np.testing.assert_array_equal(g.edge_src, [0, 0, 1, 1])
    np.testing.assert_array_equal(g.edge_dst, [0, 1, 0, 1])
    np.testing.assert_array_equal(g.edge_features.ravel(), [2.0, 1.0, 1.0, 3.0])
    np.testing.assert_array_equal(g.edge_pair_index, [0, 2, 1, 3])


def test_graph_edges_cover_every_nonzero():
    A = laplacian_5pt(3)
    g = gnn.graph_from_system(A, np.ones(A.n))
    assert len(g.edge_src) == A.nnz
    assert len(gnn.lower_edge_indices(g)) == (A.nnz - A.n) // 2
    np.testing.assert_array_equal(
        _dense_from_edges(g, g.edge_features.ravel()), A.to_dense())
    # reverse of the reverse is the identity, and endpoints actually swap
    np.testing.assert_array_equal(g.edge_pair_index[g.edge_pair_index],
                                  np.arange(A.nnz))
    np.testing.assert_array_equal(g.edge_src[g.edge_pair_index], g.edge_dst)


def test_graph_recorded_stats():
    A = laplacian_5pt(3)
    b = np.arange(1.0, A.n + 1)
    g = gnn.graph_from_system(A, b)
    assert g.node_stats[0] == pytest.approx(b.mean(), rel=1e-13)
    assert g.node_stats[1] == pytest.approx(b.std(), rel=1e-13)
    assert g.edge_stats[1] > 0.0


def test_graph_rejects_bad_systems():
    A = SparseMatrixCsr.identity(3)
    with pytest.raises(DimensionMismatchError):
        gnn.graph_from_system(A, np.ones(4))
    hollow = SparseMatrixCsr.from_coo(2, [0, 1], [1, 0], [1.0, 1.0])
    with pytest.raises(DataFormatError):
        gnn.graph_from_system(hollow, np.zeros(2))
    skew = SparseMatrixCsr.from_dense(np.array([[1.0, 2.0], [0.5, 1.0]]))
    with pytest.raises(DataFormatError):
        gnn.graph_from_system(skew, np.zeros(2))


def test_create_model_deterministic():
    m1 = gnn.create_model(SMALL, seed=7)
    m2 = gnn.create_model(SMALL, seed=7)
    assert m1.parameter_names() == m2.parameter_names()
    for name in m1.parameter_names():
        np.testing.assert_array_equal(m1.params[name], m2.params[name])
    m3 = gnn.create_model(SMALL, seed=8)
    assert any(not np.array_equal(m1.params[k], m3.params[k])
               for k in m1.parameter_names())
    # biases start at zero, weights don't
    assert all(np.all(m1.params[k] == 0.0) for k in m1.params if k.endswith(".b"))
    assert m1.n_parameters() == sum(p.size for p in m1.params.values())


def test_hyperparameter_validation():
    with pytest.raises(PcgkitError):
        gnn.GnnHyperParams(n_mp=0)
    with pytest.raises(PcgkitError):
        gnn.GnnHyperParams(h=0)


def test_forward_is_deterministic_bitwise():
    A = random_spd_csr(25, np.random.default_rng(0))
    g = gnn.graph_from_system(A, np.random.default_rng(1).standard_normal(25))
    model = gnn.create_model(SMALL, seed=2)
    e1, _ = gnn.run(model, g)
    e2, _ = gnn.run(model, g)
    np.testing.assert_array_equal(e1, e2)


def test_zero_edge_decoder_reduces_to_jacobi():
    A = laplacian_5pt(4)
    model = gnn.create_model(SMALL, seed=0)
    last = f"edge_dec.{SMALL.l}.w"
    model.params[last][:] = 0.0
    P = gnn.build_learned(model, A, np.ones(A.n))
    np.testing.assert_array_equal(P.to_dense(), build_jacobi(A).to_dense())


@pytest.mark.parametrize("with_x0,h,normalize", [(False, 8, True), (True, 12, True),
                                                 (False, 8, False)])
def test_permutation_equivariance_is_bitwise(with_x0, h, normalize):
    hyper = gnn.GnnHyperParams(l=1, h=h, n_mp=3, l_mp=1, h_mp=h,
                               with_x0_head=with_x0, normalize=normalize)
    model = gnn.create_model(hyper, seed=11)
    rng = np.random.default_rng(5)
    Ad = random_spd_csr(40, rng, density=0.2).to_dense()
    b = rng.standard_normal(40)

    perm = rng.permutation(40)  # new node i carries old node perm[i]
    g = gnn.graph_from_system(SparseMatrixCsr.from_dense(Ad), b)
    gp = gnn.graph_from_system(
        SparseMatrixCsr.from_dense(Ad[np.ix_(perm, perm)]), b[perm])

    edges, x0 = gnn.run(model, g)
    edges_p, x0_p = gnn.run(model, gp)
    M = _dense_from_edges(g, edges)
    Mp = _dense_from_edges(gp, edges_p)
    np.testing.assert_array_equal(Mp, M[np.ix_(perm, perm)])  # bitwise
    if with_x0:
        np.testing.assert_array_equal(x0_p, x0[perm])


def test_normalization_changes_the_output():
    A = random_spd_csr(15, np.random.default_rng(3))
    b = 1e4 * np.random.default_rng(4).standard_normal(15)
    g = gnn.graph_from_system(A, b)
    on = gnn.create_model(gnn.GnnHyperParams(l=1, h=8, n_mp=1, l_mp=1, h_mp=8), seed=1)
    off = gnn.GnnModel(
        gnn.GnnHyperParams(l=1, h=8, n_mp=1, l_mp=1, h_mp=8, normalize=False),
        dict(on.params))
    assert not np.array_equal(gnn.run(on, g)[0], gnn.run(off, g)[0])


def test_symmetrize_averages_directed_pairs():
    A = SparseMatrixCsr.from_dense(np.array([[5.0, 1.0], [1.0, 5.0]]))
    g = gnn.graph_from_system(A, np.zeros(2))
    vals = np.zeros(4)
    vals[(g.edge_src == 0) & (g.edge_dst == 1)] = 4.0
    vals[(g.edge_src == 1) & (g.edge_dst == 0)] = 2.0
    vals[g.edge_src == g.edge_dst] = 99.0  # self-loops must be discarded
    np.testing.assert_array_equal(gnn.symmetrize_triangulate(vals, g), [3.0])


def test_symmetrize_fixed_point_and_slot_order():
    A = laplacian_5pt(3)
    g = gnn.graph_from_system(A, np.ones(A.n))
    lower = gnn.symmetrize_triangulate(g.edge_features.ravel(), g)
    np.testing.assert_array_equal(lower, A.strict_lower().values)


def test_assemble_zero_values_is_jacobi():
    A = laplacian_5pt(4)
    P = gnn.assemble_preconditioner(np.zeros(A.strict_lower().nnz), A)
    np.testing.assert_array_equal(P.to_dense(), build_jacobi(A).to_dense())
    assert P.kind == "learned"


def test_assemble_diagonal_system_is_exact():
    A = SparseMatrixCsr.from_dense(np.diag([4.0, 2.0, 9.0]))
    P = gnn.assemble_preconditioner(np.zeros(0), A)
    b = np.array([8.0, 2.0, 27.0])
    x, report = pcg_solve(A, b, P, SolveOptions(thresholds=(1e-12,)))
    assert report.iterations <= 1
    np.testing.assert_allclose(x, [2.0, 1.0, 3.0], atol=1e-14)


def test_assembled_factor_is_spd_for_wild_values():
    rng = np.random.default_rng(8)
    A = laplacian_5pt(6)
    nnz = A.strict_lower().nnz
    for scale in (1e-8, 0.3, 1.0):
        P = gnn.assemble_preconditioner(scale * rng.standard_normal(nnz), A)
        Pd = P.to_dense()
        np.testing.assert_allclose(Pd, Pd.T, atol=0.0)
        dense_cholesky(Pd)  # raises NotSpdError if any pivot fails
    # Larger values drive sigma_min(I + L') toward zero, so the *explicit*
    # product rounds to an indefinite matrix; the factored quadratic form
    # x' B D B' x stays positive because it is a sum of positive terms.
    for scale in (1e2, 1e6):
        P = gnn.assemble_preconditioner(scale * rng.standard_normal(nnz), A)
        B = np.eye(A.n) + P.factor.strict_lower.to_dense()
        d = P.factor.diag
        for _ in range(10):
            y = B.T @ rng.standard_normal(A.n)
            assert np.sum(d * y * y) > 0.0


def test_assemble_input_validation():
    A = laplacian_5pt(3)
    with pytest.raises(DimensionMismatchError):
        gnn.assemble_preconditioner(np.zeros(3), A)
    bad = SparseMatrixCsr.from_dense(np.array([[1.0, 0.5], [0.5, -2.0]]))
    with pytest.raises(NotSpdError) as err:
        gnn.assemble_preconditioner(np.zeros(1), bad)
    assert err.value.pivot == 1


def test_learned_preconditioner_solves_poisson_grid():
    A = laplacian_5pt(7)
    b = np.random.default_rng(2).standard_normal(A.n)
    model = gnn.create_model(SMALL, seed=4)
    P = gnn.build_learned(model, A, b)
    x, report = pcg_solve(A, b, P, SolveOptions(thresholds=(1e-10,)))
    assert report.converged
    np.testing.assert_allclose(A.to_dense() @ x, b, atol=1e-8)


def test_predict_x0():
    A = laplacian_5pt(3)
    g = gnn.graph_from_system(A, np.ones(A.n))
    plain = gnn.create_model(SMALL, seed=0)
    with pytest.raises(PcgkitError):
        gnn.predict_x0(plain, g)
    hyper = gnn.GnnHyperParams(l=1, h=8, n_mp=1, l_mp=1, h_mp=8, with_x0_head=True)
    model = gnn.create_model(hyper, seed=0)
    model.params[f"node_dec.{hyper.l}.w"][:] = 0.0
    np.testing.assert_array_equal(gnn.predict_x0(model, g), np.zeros(A.n))


def test_checkpoint_roundtrip_is_bitwise(tmp_path):
    hyper = gnn.GnnHyperParams(l=2, h=6, n_mp=2, l_mp=1, h_mp=8,
                               with_x0_head=True, normalize=False)
    model = gnn.create_model(hyper, seed=13)
    path = tmp_path / "model.json"
    gnn.save_model(path, model)
    back = gnn.load_model(path)
    assert back.hyper == hyper
    assert back.parameter_names() == model.parameter_names()
    for name in model.parameter_names():
        np.testing.assert_array_equal(back.params[name], model.params[name])
    # saving the same model twice produces identical bytes
    other = tmp_path / "again.json"
    gnn.save_model(other, model)
    assert other.read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("{not json")
    with pytest.raises(DataFormatError):
        gnn.load_model(path)
    gnn.save_model(path, gnn.create_model(SMALL, seed=0))
    doc = path.read_text()
    path.write_text(doc.replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(DataFormatError):
        gnn.load_model(path)
    with pytest.raises(DataFormatError):
        gnn.load_model(tmp_path / "missing.json")


def test_parameter_validation_catches_drift():
    model = gnn.create_model(SMALL, seed=0)
    broken = model.copy()
    del broken.params["edge_enc.0.w"]
    with pytest.raises(DimensionMismatchError, match="edge_enc.0.w"):
        gnn._validate_params(broken)
    wrong = model.copy()
    wrong.params["node_enc.0.w"] = np.zeros((2, 2))
    with pytest.raises(DimensionMismatchError):
        gnn._validate_params(wrong)
    poisoned = model.copy()
    poisoned.params["node_enc.0.w"] = np.full_like(model.params["node_enc.0.w"], np.nan)
    with pytest.raises(DataFormatError):
        gnn._validate_params(poisoned)


def test_forward_cost_grows_linearly_with_edges():
    model = gnn.create_model(SMALL, seed=0)

    def best_time(k):
        A = laplacian_5pt(k)
        g = gnn.graph_from_system(A, np.ones(A.n))
        gnn.run(model, g)  # warm-up
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            gnn.run(model, g)
            best = min(best, time.perf_counter() - t0)
        return best

    small, large = best_time(10), best_time(20)  # ~4x the edges
    assert large / small < 8.0
