import numpy as np
import pytest
import scipy.sparse as sp

from thmfrac import linalg
from thmfrac.errors import MaxIterationsError, SingularMatrixError


def test_identity_solve():
    A = sp.eye(5, format="csr")
    b = np.arange(5.0)
    x = linalg.solve(A, b)
    assert np.allclose(x, b)


def test_two_by_two_hand_solve():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    x = linalg.solve(A, np.array([3.0, 3.0]))
    assert np.allclose(x, [1.0, 1.0])


def test_random_spd_residual_bound():
    rng = np.random.default_rng(7)
    n = 50
    B = rng.standard_normal((n, n))
    A = B @ B.T + n * np.eye(n)
    b = rng.standard_normal(n)
    x = linalg.solve(A, b)
    nrmA = np.linalg.norm(A)
    assert np.linalg.norm(A @ x - b) <= 1e-11 * (nrmA * np.linalg.norm(x) + np.linalg.norm(b))


def test_residual_bound_on_random_sparse_systems():
    rng = np.random.default_rng(11)
    for trial in range(100):
        n = rng.integers(5, 40)
        A = sp.random(n, n, density=0.3, random_state=rng.integers(1 << 31)).tolil()
        A.setdiag(A.diagonal() + n)
        b = rng.standard_normal(n)
        fact = linalg.factorize(A.tocsr())
        x = fact.solve(b)
        dense = A.toarray()
        bound = 1e-11 * (np.linalg.norm(dense) * np.linalg.norm(x) + np.linalg.norm(b))
        assert np.linalg.norm(dense @ x - b) <= bound


def test_deterministic_results():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((20, 20)) + 20 * np.eye(20)
    b = rng.standard_normal(20)
    x1 = linalg.solve(A, b)
    x2 = linalg.solve(A, b)
    assert np.array_equal(x1, x2)


def test_singular_raises():
    A = np.zeros((3, 3))
    A[0, 0] = 1.0
    with pytest.raises(SingularMatrixError):
        linalg.factorize(A)


def test_triplet_assembly_sums_duplicates():
    m = linalg.SparseMatrix(3)
    m.add([0, 0, 1], [0, 0, 2], [1.0, 2.0, 5.0])
    csr = m.tocsr()
    assert csr[0, 0] == 3.0
    assert csr[1, 2] == 5.0
    assert csr.nnz == 2


def test_triplet_rejects_nonfinite():
    m = linalg.SparseMatrix(2)
    m.add([0], [0], [np.nan])
    with pytest.raises(ValueError):
        m.tocsr()


def test_gmres_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    x = linalg.gmres(lambda v: v, b, tol=1e-12)
    assert np.allclose(x, b)


def test_gmres_diagonal_spectrum():
    # Three distinct eigenvalues: exact-arithmetic GMRES needs 3 iterations;
    # assert convergence well within twice that budget.
    d = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    b = np.ones(6)
    x = linalg.gmres(lambda v: d * v, b, tol=1e-12, restart=6, maxiter=6)
    assert np.allclose(d * x, b, atol=1e-10)


def test_gmres_matches_direct_solve():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((30, 30)) + 30 * np.eye(30)
    b = rng.standard_normal(30)
    x_direct = linalg.solve(A, b)
    x_gmres = linalg.gmres(lambda v: A @ v, b, tol=1e-12, restart=30, maxiter=50)
    assert np.allclose(x_gmres, x_direct, atol=1e-8)


def test_gmres_max_iterations():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((40, 40)) + np.diag(np.linspace(1, 1e4, 40))
    b = rng.standard_normal(40)
    with pytest.raises(MaxIterationsError):
        linalg.gmres(lambda v: A @ v, b, tol=1e-14, restart=2, maxiter=1)
