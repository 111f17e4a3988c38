"""Symmetric-matrix arithmetic, cone projections, and linear solvers.

All symmetric matrices are plain ``(n, n)`` float ndarrays under the
Frobenius inner product.  Anything that constructs one symmetrizes its
input as ``(S + S.T) / 2`` first, so downstream code never sees
asymmetry drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse


class SingularOperatorError(Exception):
    """A factorization hit a non-positive pivot."""

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot})")


class ConvergenceError(Exception):
    """An iterative solve ran out of iterations."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(message)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part (a + a.T) / 2 as a float array."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def require_finite(a: np.ndarray, name: str = "input") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def frob_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product <A, B> = sum_ij A_ij B_ij."""
    return float(np.tensordot(a, b))


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectral factorization S = V diag(values) V.T, eigenvalues ascending."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def sym_eig(s: np.ndarray) -> EigenDecomposition:
    """Full eigendecomposition of the symmetrized input."""
    s = symmetrize(require_finite(s, "matrix"))
    values, vectors = np.linalg.eigh(s)
    return EigenDecomposition(values=values, vectors=vectors)


def project_psd(s: np.ndarray) -> np.ndarray:
    """Project onto the positive semidefinite cone (eigenvalue clipping)."""
    dec = sym_eig(s)
    clipped = np.maximum(dec.values, 0.0)
    return symmetrize((dec.vectors * clipped) @ dec.vectors.T)


def project_nonneg(s: np.ndarray) -> np.ndarray:
    """Project onto entrywise-nonnegative symmetric matrices."""
    return np.maximum(symmetrize(require_finite(s, "matrix")), 0.0)


def project_nonneg_vec(v: np.ndarray) -> np.ndarray:
    """Project onto the nonnegative orthant."""
    return np.maximum(require_finite(v, "vector"), 0.0)


class CholeskyFactor:
    """Cached Cholesky factorization of a symmetric positive definite matrix.

    The factorization is computed once at construction and reused for
    every subsequent right-hand side.
    """

    def __init__(self, g: np.ndarray):
        g = symmetrize(require_finite(g, "matrix"))
        c, info = scipy.linalg.lapack.dpotrf(g, lower=1)
        if info > 0:
            raise SingularOperatorError(pivot=int(info))
        if info < 0:
            raise ValueError(f"bad argument {-info} to dpotrf")
        self._lower = c
        self.dim = g.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x, info = scipy.linalg.lapack.dpotrs(self._lower, rhs, lower=1)
        if info != 0:
            raise ValueError(f"dpotrs failed with info {info}")
        return x


def cholesky_solve(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """One-shot positive definite solve G x = rhs."""
    return CholeskyFactor(g).solve(rhs)


def cg_solve(
    op,
    rhs: np.ndarray,
    tol: float,
    max_iter: int = 1000,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, float, int]:
    """Conjugate gradients for a self-adjoint positive definite operator.

    ``op`` is a callable v -> op(v).  Iterates until the true residual
    norm ||op(x) - rhs|| drops below ``tol`` (absolute) and returns
    ``(x, residual_norm, iterations)``.  Raises :class:`ConvergenceError`
    when ``max_iter`` is exhausted first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - op(x)
    res = float(np.linalg.norm(r))
    if res <= tol:
        return x, res, 0
    p = r.copy()
    rr = res * res
    for it in range(1, max_iter + 1):
        ap = op(p)
        alpha = rr / float(p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = float(r @ r)
        if rr_new <= tol * tol:
            # recompute the true residual; recursion drift may hide above tol
            true_r = rhs - op(x)
            res = float(np.linalg.norm(true_r))
            if res <= tol:
                return x, res, it
            r = true_r
            rr_new = res * res
        p = r + (rr_new / rr) * p
        rr = rr_new
    res = float(np.linalg.norm(rhs - op(x)))
    raise ConvergenceError(
        f"conjugate gradients did not reach tol {tol:g} in {max_iter} iterations "
        f"(residual {res:g})",
        residual=res,
    )


def lambda_max_estimate(op, dim: int, tol: float = 1e-8, max_iter: int = 5000) -> float:
    """Largest-eigenvalue estimate of a self-adjoint PSD operator (power method)."""
    if dim == 0:
        return 0.0
    rng = np.random.default_rng(0)
    v = np.ones(dim) + 1e-3 * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = op(v)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / norm_w
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


class ConstraintMap:
    """Linear map from symmetric n x n matrices to R^m.

    Row ``i`` is a sparse symmetric matrix ``A_i``; ``apply(X)[i]`` is the
    Frobenius inner product ``<A_i, X>`` and ``adjoint(v)`` is
    ``sum_i v_i A_i``.  Rows are symmetrized at construction and the map
    is immutable afterwards.
    """

    def __init__(self, n: int, rows):
        self.n = int(n)
        mats = []
        for i, row in enumerate(rows):
            if scipy.sparse.issparse(row):
                row = row.toarray()
            a = symmetrize(require_finite(row, f"constraint row {i}"))
            if a.shape != (self.n, self.n):
                raise ValueError(
                    f"constraint row {i} has shape {a.shape}, expected {(self.n, self.n)}"
                )
            mats.append(scipy.sparse.csr_matrix(a))
        self.m = len(mats)
        self.rows = mats
        if self.m:
            self._flat = scipy.sparse.vstack(
                [r.reshape(1, self.n * self.n) for r in mats], format="csr"
            )
        else:
            self._flat = scipy.sparse.csr_matrix((0, self.n * self.n))
        self._gram: np.ndarray | None = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._flat @ np.asarray(x, dtype=float).ravel()

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        out = self._flat.T @ np.asarray(v, dtype=float)
        return out.reshape(self.n, self.n)

    def gram(self) -> np.ndarray:
        """Dense m x m Gram matrix of the map, A A* (cached)."""
        if self._gram is None:
            g = (self._flat @ self._flat.T).toarray()
            self._gram = symmetrize(g)
        return self._gram

    def lambda_max_gram(self, tol: float = 1e-8) -> float:
        g = self.gram()
        return lambda_max_estimate(lambda v: g @ v, self.m, tol=tol)

    def lambda_min_gram(self) -> float:
        if self.m == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.gram())[0])
