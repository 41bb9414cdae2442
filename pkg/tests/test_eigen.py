import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcgkit.eigen import (
    condition_number_dense,
    condition_number_from_dense,
    symmetric_eigenvalues,
)
from pcgkit.errors import DenseBudgetError, NotSpdError
from pcgkit.sparse import SparseMatrixCsr
from util_matrices import laplacian_5pt, laplacian_5pt_eigenvalues, random_spd_dense


def test_identity_has_unit_condition_number():
    assert condition_number_dense(SparseMatrixCsr.identity(5)) == pytest.approx(1.0, abs=1e-12)


def test_diagonal_condition_number():
    a = SparseMatrixCsr.from_dense(np.diag([1.0, 4.0]))
    assert condition_number_dense(a) == pytest.approx(4.0, abs=1e-12)


def test_five_point_laplacian_against_analytic_eigenvalues():
    """Interior 4x4 grid: eigenvalues 4 - 2cos(p*pi/5) - 2cos(q*pi/5)."""
    a = laplacian_5pt(4)
    expected = laplacian_5pt_eigenvalues(4)
    got = symmetric_eigenvalues(a.to_dense())
    assert np.abs(got - expected).max() < 1e-12
    assert condition_number_dense(a) == pytest.approx(expected[-1] / expected[0], rel=1e-12)


def test_indefinite_matrix_rejected():
    with pytest.raises(NotSpdError):
        condition_number_from_dense(np.diag([1.0, -2.0]))


def test_budget_enforced():
    with pytest.raises(DenseBudgetError):
        symmetric_eigenvalues(np.zeros((5000, 5000)))


def test_zero_matrix_eigenvalues():
    assert np.array_equal(symmetric_eigenvalues(np.zeros((3, 3))), np.zeros(3))


@settings(deadline=None, max_examples=12)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 60))
def test_eigenvalues_match_reference(seed, n):
    rng = np.random.default_rng(seed)
    a = random_spd_dense(n, rng)
    got = symmetric_eigenvalues(a)
    ref = np.linalg.eigvalsh(a)
    assert np.abs(got - ref).max() <= 1e-10 * np.abs(ref).max()


@settings(deadline=None, max_examples=12)
@given(seed=st.integers(0, 10_000))
def test_eigenvalue_sum_is_trace(seed):
    rng = np.random.default_rng(seed)
    a = random_spd_dense(25, rng)
    assert symmetric_eigenvalues(a).sum() == pytest.approx(np.trace(a), rel=1e-12)
