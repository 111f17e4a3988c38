import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipadmm.linalg import (
    CholeskyFactor,
    ConstraintMap,
    ConvergenceError,
    SingularOperatorError,
    cg_solve,
    cholesky_solve,
    frob_inner,
    lambda_max_estimate,
    project_nonneg,
    project_nonneg_vec,
    project_psd,
    sym_eig,
    symmetrize,
)


def random_sym(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) * scale
    return 0.5 * (a + a.T)


class TestSymEig:
    def test_diagonal(self):
        dec = sym_eig(np.diag([1.0, 2.0, 3.0]))
        assert np.allclose(dec.values, [1.0, 2.0, 3.0])
        assert np.allclose(np.abs(dec.vectors), np.eye(3))

    def test_identity(self):
        dec = sym_eig(np.eye(4))
        assert np.allclose(dec.values, 1.0)

    def test_reconstruction_random(self):
        rng = np.random.default_rng(0)
        s = random_sym(rng, 5)
        dec = sym_eig(s)
        assert np.linalg.norm(dec.reconstruct() - s) <= 1e-10 * max(1.0, np.linalg.norm(s))
        assert np.linalg.norm(dec.vectors.T @ dec.vectors - np.eye(5)) <= 1e-10

    def test_ascending(self):
        rng = np.random.default_rng(1)
        dec = sym_eig(random_sym(rng, 8))
        assert np.all(np.diff(dec.values) >= 0)

    def test_nonfinite_rejected(self):
        s = np.eye(3)
        s[0, 1] = np.nan
        with pytest.raises(ValueError):
            sym_eig(s)

    def test_asymmetric_symmetrized(self):
        a = np.array([[1.0, 2.0], [0.0, 1.0]])
        dec = sym_eig(a)
        assert np.allclose(dec.reconstruct(), symmetrize(a))


class TestProjectPsd:
    def test_eigenvalue_clipping(self):
        assert np.allclose(project_psd(np.diag([2.0, -3.0])), np.diag([2.0, 0.0]))

    def test_idempotent_on_psd(self):
        rng = np.random.default_rng(2)
        b = rng.normal(size=(5, 5))
        s = b @ b.T
        assert np.allclose(project_psd(s), s, atol=1e-12)

    def test_variational_inequality(self):
        # projection optimality: <P(S) - S, Y - P(S)> >= 0 for feasible Y
        rng = np.random.default_rng(3)
        s = random_sym(rng, 6)
        p = project_psd(s)
        for _ in range(100):
            b = rng.normal(size=(6, 6))
            y = b @ b.T
            assert frob_inner(p - s, y - p) >= -1e-9

    def test_moreau_identity(self):
        rng = np.random.default_rng(4)
        s = random_sym(rng, 7)
        assert np.linalg.norm(s - (project_psd(s) - project_psd(-s))) <= 1e-10
        assert abs(frob_inner(project_psd(s), s - project_psd(s))) <= 1e-10


class TestProjectNonneg:
    def test_all_negative(self):
        assert np.array_equal(project_nonneg(-np.ones((3, 3))), np.zeros((3, 3)))

    def test_nonneg_fixed(self):
        s = np.array([[1.0, 0.5], [0.5, 2.0]])
        assert np.array_equal(project_nonneg(s), s)

    def test_entrywise_separable(self):
        # per-entry 1-d minimization of (z - s)^2 over z >= 0
        rng = np.random.default_rng(5)
        s = random_sym(rng, 3)
        p = project_nonneg(s)
        grid = np.linspace(0.0, 5.0, 5001)
        for i in range(3):
            for j in range(3):
                best = grid[np.argmin((grid - s[i, j]) ** 2)]
                assert abs(p[i, j] - best) <= 1e-3

    def test_vector(self):
        assert np.array_equal(project_nonneg_vec(np.array([-1.0, 2.0])), [0.0, 2.0])
        assert np.array_equal(project_nonneg_vec(np.zeros(3)), np.zeros(3))
        rng = np.random.default_rng(6)
        v = rng.normal(size=20)
        assert np.array_equal(project_nonneg_vec(v), v - np.minimum(v, 0.0))


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_projection_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    s = random_sym(rng, n, scale=float(rng.uniform(0.1, 10.0)))
    norm2 = np.linalg.norm(s) ** 2
    for proj in (project_psd, project_nonneg):
        p = proj(s)
        assert np.linalg.norm(proj(p) - p) <= 1e-12 * max(1.0, np.linalg.norm(p))
        # Moreau decomposition against the polar (self-dual cones)
        q = proj(-s)
        assert np.linalg.norm(s - (p - q)) <= 1e-10 * max(1.0, np.linalg.norm(s))
        assert abs(frob_inner(p, q)) <= 1e-10 * max(1.0, norm2)


class TestCholesky:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        assert np.allclose(cholesky_solve(np.eye(3), b), b)

    def test_scalar(self):
        assert np.allclose(cholesky_solve(np.array([[4.0]]), np.array([8.0])), [2.0])

    def test_residual_random(self):
        rng = np.random.default_rng(7)
        b = rng.normal(size=(8, 8))
        g = b @ b.T + np.eye(8)
        rhs = rng.normal(size=8)
        x = cholesky_solve(g, rhs)
        assert np.linalg.norm(g @ x - rhs) <= 1e-10 * max(1.0, np.linalg.norm(rhs))
        assert np.allclose(x, np.linalg.solve(g, rhs))

    def test_cached_factor_reused(self):
        rng = np.random.default_rng(8)
        b = rng.normal(size=(6, 6))
        g = b @ b.T + np.eye(6)
        factor = CholeskyFactor(g)
        for _ in range(3):
            rhs = rng.normal(size=6)
            assert np.linalg.norm(g @ factor.solve(rhs) - rhs) <= 1e-10

    def test_non_pd_names_pivot(self):
        g = np.diag([1.0, -1.0, 2.0])
        with pytest.raises(SingularOperatorError) as err:
            CholeskyFactor(g)
        assert err.value.pivot == 2


class TestCg:
    def test_identity_one_iteration(self):
        rhs = np.array([1.0, 2.0])
        x, res, iters = cg_solve(lambda v: v, rhs, tol=1e-12)
        assert np.allclose(x, rhs)
        assert iters <= 1

    def test_diagonal_exact(self):
        d = np.arange(1.0, 6.0)
        x, res, _ = cg_solve(lambda v: d * v, np.ones(5), tol=1e-12)
        assert np.allclose(x, 1.0 / d, atol=1e-11)
        assert res <= 1e-12

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(9)
        m = 10
        rows = rng.normal(size=(m, 40))
        g = rows @ rows.T + 1.0001 * np.eye(m)
        rhs = rng.normal(size=m)
        x, res, _ = cg_solve(lambda v: g @ v, rhs, tol=1e-10)
        assert np.allclose(x, cholesky_solve(g, rhs), atol=1e-8)

    def test_cap_exceeded_carries_residual(self):
        rng = np.random.default_rng(10)
        b = rng.normal(size=(30, 30))
        g = b @ b.T + 1e-8 * np.eye(30)
        with pytest.raises(ConvergenceError) as err:
            cg_solve(lambda v: g @ v, rng.normal(size=30), tol=1e-14, max_iter=2)
        assert err.value.residual > 0

    def test_agrees_with_cholesky_on_random_pd(self):
        rng = np.random.default_rng(11)
        for m in (5, 20, 50):
            b = rng.normal(size=(m, m))
            g = b @ b.T + np.eye(m)
            rhs = rng.normal(size=m)
            x, _, _ = cg_solve(lambda v: g @ v, rhs, tol=1e-12, max_iter=10 * m)
            assert np.linalg.norm(x - cholesky_solve(g, rhs)) <= 1e-8


class TestLambdaMax:
    def test_diagonal(self):
        d = np.array([1.0, 2.0, 3.0])
        assert abs(lambda_max_estimate(lambda v: d * v, 3, tol=1e-10) - 3.0) <= 1e-6

    def test_identity(self):
        assert abs(lambda_max_estimate(lambda v: v, 4) - 1.0) <= 1e-8

    def test_zero_operator(self):
        assert lambda_max_estimate(lambda v: 0.0 * v, 5) == 0.0

    def test_matches_dense_eig(self):
        rng = np.random.default_rng(12)
        mat = ConstraintMap(6, [random_sym(rng, 6) for _ in range(10)])
        g = mat.gram()
        est = lambda_max_estimate(lambda v: g @ v, 10, tol=1e-10)
        exact = np.linalg.eigvalsh(g)[-1]
        assert abs(est - exact) <= 1e-6 * exact


class TestConstraintMap:
    def test_apply_matches_inner_products(self):
        rng = np.random.default_rng(13)
        rows = [random_sym(rng, 4) for _ in range(3)]
        cmap = ConstraintMap(4, rows)
        x = random_sym(rng, 4)
        expected = [frob_inner(r, x) for r in rows]
        assert np.allclose(cmap.apply(x), expected, rtol=1e-14, atol=1e-14)

    def test_adjoint_is_weighted_sum(self):
        rng = np.random.default_rng(14)
        rows = [random_sym(rng, 5) for _ in range(4)]
        cmap = ConstraintMap(5, rows)
        v = rng.normal(size=4)
        expected = sum(vi * r for vi, r in zip(v, rows))
        assert np.allclose(cmap.adjoint(v), expected)

    def test_adjoint_consistency_many_draws(self):
        rng = np.random.default_rng(15)
        cmap = ConstraintMap(6, [random_sym(rng, 6) for _ in range(8)])
        for _ in range(100):
            x = random_sym(rng, 6)
            v = rng.normal(size=8)
            lhs = float(cmap.apply(x) @ v)
            rhs = frob_inner(x, cmap.adjoint(v))
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs), abs(rhs))

    def test_gram(self):
        rng = np.random.default_rng(16)
        rows = [random_sym(rng, 4) for _ in range(3)]
        cmap = ConstraintMap(4, rows)
        g = cmap.gram()
        for i in range(3):
            for j in range(3):
                assert abs(g[i, j] - frob_inner(rows[i], rows[j])) <= 1e-12

    def test_empty_map(self):
        cmap = ConstraintMap(3, [])
        assert cmap.m == 0
        assert cmap.apply(np.eye(3)).shape == (0,)
        assert np.array_equal(cmap.adjoint(np.zeros(0)), np.zeros((3, 3)))
