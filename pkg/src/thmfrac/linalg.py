"""Sparse linear algebra kernel used by the flow and contact Newton loops.

Triplet assembly compiles to CSR; linear systems are solved with a sparse LU
factorization (SuperLU through scipy) and an optional restarted GMRES for the
matrix-free fixed-point acceleration.  Factorizations are immutable, so one
factorization may serve several right-hand sides.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MaxIterationsError, SingularMatrixError


class SparseMatrix:
    """Square sparse matrix assembled from (row, col, value) triplets.

    Duplicate entries are summed on compilation.  Non-finite values are
    rejected early: they would otherwise surface as cryptic factorization
    failures.
    """

    def __init__(self, n: int):
        self.n = n
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._csr: sp.csr_matrix | None = None

    def add(self, rows, cols, vals) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("triplet arrays must have matching shapes")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)
        self._csr = None

    def tocsr(self) -> sp.csr_matrix:
        if self._csr is None:
            if self._rows:
                rows = np.concatenate(self._rows)
                cols = np.concatenate(self._cols)
                vals = np.concatenate(self._vals)
            else:
                rows = cols = np.empty(0, dtype=np.int64)
                vals = np.empty(0)
            if not np.all(np.isfinite(vals)):
                raise ValueError("non-finite entries in sparse assembly")
            mat = sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n))
            self._csr = mat.tocsr()
            self._csr.sum_duplicates()
        return self._csr


class Factorization:
    """Immutable LU factorization; concurrent solves are safe."""

    def __init__(self, lu, n: int):
        self._lu = lu
        self.n = n

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs length {b.shape[0]} != {self.n}")
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("factorization produced non-finite solution")
        return x


def factorize(A) -> Factorization:
    """LU-factorize a square sparse matrix with partial pivoting.

    Accepts a SparseMatrix, any scipy sparse matrix, or a dense ndarray.
    Raises SingularMatrixError on structural or numerical singularity.
    """
    if isinstance(A, SparseMatrix):
        mat = A.tocsr()
    elif sp.issparse(A):
        mat = A.tocsr()
    else:
        mat = sp.csr_matrix(np.asarray(A, dtype=np.float64))
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(mat.data)):
        raise ValueError("non-finite entries in matrix")
    try:
        lu = spla.splu(mat.tocsc())
    except RuntimeError as exc:  # SuperLU reports "Factor is exactly singular"
        raise SingularMatrixError(str(exc)) from exc
    diag_u = lu.U.diagonal()
    if np.any(diag_u == 0.0) or not np.all(np.isfinite(diag_u)):
        bad = int(np.argmin(np.abs(diag_u)))
        raise SingularMatrixError(f"zero pivot at index {bad}")
    return Factorization(lu, mat.shape[0])


def solve(fact_or_matrix, b: np.ndarray) -> np.ndarray:
    """Solve A x = b through an LU factorization."""
    if isinstance(fact_or_matrix, Factorization):
        return fact_or_matrix.solve(b)
    return factorize(fact_or_matrix).solve(b)


def gmres(apply_A, b: np.ndarray, tol: float = 1e-10, restart: int = 30,
          maxiter: int = 200, x0: np.ndarray | None = None) -> np.ndarray:
    """Restarted GMRES on a matrix-free operator.

    ``apply_A`` maps a vector to A @ v.  Converges when the relative residual
    drops below ``tol``; raises MaxIterationsError otherwise.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    # Fresh output buffer each call: scipy aliases the returned array.
    matvec = lambda v: np.array(apply_A(v), dtype=np.float64, copy=True)
    op = spla.LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    x, info = spla.gmres(op, b, x0=x0, rtol=tol, atol=0.0, restart=restart,
                         maxiter=maxiter)
    if info != 0:
        raise MaxIterationsError(f"gmres did not converge (info={info})")
    return x
