import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gpelab.numerics import (
    LU,
    SPD,
    NotPositiveDefiniteError,
    RankDeficientError,
    SingularMatrixError,
    bandwidth,
    factorize,
    matvec,
    saddle_solve,
    solve,
    sparse_from_triplets,
)


def laplacian(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_triplets_sum_duplicates():
    A = sparse_from_triplets([(0, 0, 1.0), (0, 0, 2.5), (1, 2, -1.0)], 2, 3)
    assert A.shape == (2, 3)
    np.testing.assert_array_equal(A.toarray(), [[3.5, 0, 0], [0, 0, -1.0]])


def test_triplets_from_arrays():
    A = sparse_from_triplets((np.array([0, 1]), np.array([1, 0]), np.array([2.0, 3.0])), 2, 2)
    np.testing.assert_array_equal(A.toarray(), [[0, 2], [3, 0]])


def test_triplet_out_of_range_is_reported():
    with pytest.raises(IndexError, match="5"):
        sparse_from_triplets([(0, 0, 1.0), (5, 0, 1.0)], 2, 2)


def test_matvec_checks_shape():
    A = laplacian(4)
    np.testing.assert_allclose(matvec(A, np.ones(4)), [1, 0, 0, 1])
    with pytest.raises(ValueError):
        matvec(A, np.ones(3))


def test_bandwidth():
    assert bandwidth(laplacian(6)) == 1
    assert bandwidth(sp.identity(3, format="csr")) == 0


def test_spd_solve_matches_dense(rng):
    A = laplacian(30) + sp.identity(30)
    b = rng.standard_normal(30) + 1j * rng.standard_normal(30)
    x = solve(factorize(A, SPD), b)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-12, atol=1e-12)


def test_spd_multiple_rhs(rng):
    A = laplacian(10) + 0.1 * sp.identity(10)
    B = rng.standard_normal((10, 3))
    np.testing.assert_allclose(A @ factorize(A).solve(B), B, atol=1e-11)


def test_indefinite_matrix_is_rejected():
    A = laplacian(5) - 3 * sp.identity(5)
    with pytest.raises(NotPositiveDefiniteError):
        factorize(A, SPD)


def test_structurally_singular():
    A = sp.csr_matrix(np.array([[1.0, 0], [0, 0]]))
    with pytest.raises(SingularMatrixError):
        factorize(A, LU)


def test_nonsymmetric_spd_request():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(ValueError, match="symmetric"):
        factorize(A, SPD)
    x = factorize(A, LU).solve(np.array([3.0, 2.0]))
    np.testing.assert_allclose(x, [1.0, 1.0])


def test_complex_lu(rng):
    A = sp.csr_matrix(laplacian(8) * (1 + 2j) + sp.identity(8))
    b = rng.standard_normal(8) + 0j
    np.testing.assert_allclose(A @ factorize(A, LU).solve(b), b, atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        factorize(laplacian(4)).solve(np.ones(5))


def _kkt(A, C, b):
    n, m = A.shape[0], C.shape[0]
    K = np.block([[A, C.T], [C, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([b, np.zeros(m)]))
    return sol[:n], sol[n:]


@settings(max_examples=30, deadline=None)
@given(n=st.integers(4, 25), m=st.integers(0, 3), seed=st.integers(0, 2**31))
def test_saddle_solve_matches_dense_kkt(n, m, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    A = G @ G.T + n * np.eye(n)
    C = rng.standard_normal((m, n))
    b = rng.standard_normal(n)
    x, lam = saddle_solve(factorize(sp.csr_matrix(A)), sp.csr_matrix(C), b)
    x_ref, lam_ref = _kkt(A, C, b)
    scale = max(1.0, np.abs(x_ref).max())
    assert np.abs(x - x_ref).max() <= 1e-10 * scale
    assert np.abs(lam - lam_ref).max(initial=0) <= 1e-10 * max(1.0, np.abs(lam_ref).max(initial=0))
    if m:
        assert np.abs(C @ x).max() <= 1e-10 * scale


def test_saddle_rank_deficiency_is_labelled():
    A = sp.csr_matrix(laplacian(6) + sp.identity(6))
    C = sp.csr_matrix(np.array([[1.0, 1, 0, 0, 0, 0], [2.0, 2, 0, 0, 0, 0]]))
    with pytest.raises(RankDeficientError, match="patch 3"):
        saddle_solve(factorize(A), C, np.ones(6), label="patch 3")
