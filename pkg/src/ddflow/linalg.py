"""Linear algebra kernels: sparse LU, dense symmetric eigensolve, and the
inf-sup diagnostic.  Backed by scipy/numpy (LAPACK/SuperLU) behind the
contracts used elsewhere in the package."""

from __future__ import annotations

import numpy as np
import scipy.linalg as dla
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SingularMatrixError(RuntimeError):
    pass


class SparseFactorization:
    """LU factorization of a square sparse matrix; immutable, reusable."""

    def __init__(self, matrix):
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix is {matrix.shape}, expected square")
        self.shape = matrix.shape
        try:
            self._lu = splu(sp.csc_matrix(matrix))
        except RuntimeError as exc:
            if "singular" in str(exc).lower():
                raise SingularMatrixError(str(exc)) from exc
            raise
        if not np.all(np.isfinite(self._lu.U.diagonal())):
            raise SingularMatrixError("zero pivot encountered")

    def solve(self, rhs, transpose=False):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.shape[0]:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, expected {self.shape[0]}")
        return self._lu.solve(rhs, trans="T" if transpose else "N")


def sparse_lu(matrix):
    return SparseFactorization(matrix)


def solve(factorization, rhs):
    return factorization.solve(rhs)


def sym_eig(matrix):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Returns (eigenvalues, eigenvectors) with A Q = Q diag(lam) and
    orthonormal columns.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix is {a.shape}, expected square")
    scale = np.abs(a).max() if a.size else 0.0
    if scale > 0 and np.abs(a - a.T).max() > 1e-12 * max(scale, 1.0):
        raise ValueError("matrix is not symmetric to 1e-12")
    lam, q = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(lam)[::-1]
    return lam[order], q[:, order]


def smallest_generalized_singular_value(b, x_u, x_p):
    """Discrete inf-sup constant of a divergence coupling.

    beta = min over pressure modes q of max over velocities v of
    (q^T B v) / (||v||_{X_u} ||q||_{X_p}), computed densely via Cholesky
    whitening of the two inner products.
    """
    b = b.toarray() if sp.issparse(b) else np.asarray(b, float)
    x_u = x_u.toarray() if sp.issparse(x_u) else np.asarray(x_u, float)
    x_p = x_p.toarray() if sp.issparse(x_p) else np.asarray(x_p, float)
    n_p, n_u = b.shape
    if x_u.shape != (n_u, n_u) or x_p.shape != (n_p, n_p):
        raise ValueError("inner-product shapes do not match the coupling matrix")
    lu = dla.cholesky(0.5 * (x_u + x_u.T), lower=True)
    lp = dla.cholesky(0.5 * (x_p + x_p.T), lower=True)
    # G = L_p^{-1} B L_u^{-T}
    g = dla.solve_triangular(lp, b, lower=True)
    g = dla.solve_triangular(lu, g.T, lower=True).T
    return float(np.linalg.svd(g, compute_uv=False).min())
