import numpy as np
import pytest

from ipadmm.engine import (
    Criterion,
    EngineConfig,
    ErrorSchedule,
    InexactCertificate,
    SolveStatus,
    ValidationError,
    criterion_check,
    ensure_valid,
    gamma_for_c1,
    outer_iterate,
    solve,
    validate_config,
)
from ipadmm.problems import QuadraticToy


def reference_admm(a, b, c, sigma, tau, z0, iters):
    """Textbook ADMM recursion for the quadratic toy (independent oracle)."""
    z = np.array(z0, dtype=float)
    x = np.array(a, dtype=float)
    y = np.array(b, dtype=float)
    out = []
    for _ in range(iters):
        x = (2 * a - z - sigma * (y - c)) / (2 + sigma)
        y = (2 * b - z - sigma * (x - c)) / (2 + sigma)
        z = z + tau * sigma * (x + y - c)
        out.append((x.copy(), y.copy(), z.copy()))
    return out


def toy_config(**kw):
    base = dict(
        sigma=1.0,
        tau=1.618,
        criterion=Criterion.EXACT,
        eta_tol=1e-12,
        k_max=200,
    )
    base.update(kw)
    return EngineConfig(**base)


class TestErrorSchedule:
    def test_values(self):
        s = ErrorSchedule(0.1, 1.001)
        assert s(1) == 0.1
        assert abs(s(10) - 10 ** (-1.001)) < 1e-15
        assert s(10) < 0.1

    def test_zero_schedule(self):
        z = ErrorSchedule.zero()
        assert z(1) == 0.0 and z(10**6) == 0.0
        assert z.partial_sum_bound() == 0.0

    def test_bounds(self):
        s = ErrorSchedule(0.1, 1.001)
        assert abs(s.partial_sum_bound() - 1001.0) < 1e-9
        assert s.partial_sum_bound(power=2) == 1.0 + 1.0 / (2 * 1.001 - 1.0)

    def test_index_starts_at_one(self):
        with pytest.raises(ValueError):
            ErrorSchedule(0.1, 1.5)(0)


class TestValidateConfig:
    def test_paper_style_c1_valid(self):
        cfg = EngineConfig(tau=1.618, criterion=Criterion.C1, mu=ErrorSchedule(0.1, 1.001))
        assert validate_config(cfg) == []

    def test_tau_two_rejected(self):
        out = validate_config(toy_config(tau=2.0))
        assert any(v.name == "step-size-range" for v in out)

    def test_gamma_too_small_rejected(self):
        cfg = EngineConfig(
            criterion=Criterion.C2PRIME,
            gamma=100.0,
            tau=1.0,
            mu=ErrorSchedule(0.01, 0.75),
            nu=ErrorSchedule(0.01, 0.75),
        )
        assert any(v.name == "gamma-lower-bound" for v in validate_config(cfg))

    def test_large_tau_needs_override(self):
        cfg = toy_config(tau=1.9)
        assert any(v.name == "step-size-needs-override" for v in validate_config(cfg))
        assert validate_config(toy_config(tau=1.9, allow_large_tau=True)) == []

    def test_ensure_valid_raises(self):
        with pytest.raises(ValidationError):
            ensure_valid(toy_config(sigma=-1.0))

    def test_gamma_for_c1(self):
        cfg = EngineConfig(tau=1.618, mu=ErrorSchedule(0.1, 1.001))
        gamma = gamma_for_c1(cfg)
        bound = min(1.0 / 6.0, (2.0 - 1.618) / 4.0)
        assert 0.1 <= gamma * bound + 1e-15


class TestCriterionCheck:
    def test_c1_accept(self):
        # mu at k+1 = 10 is min(0.1, 10^-1.001) ~ 0.0998
        cfg = EngineConfig(criterion=Criterion.C1, mu=ErrorSchedule(0.1, 1.001))
        cert = InexactCertificate(0.05, 0.0, 1.0, 1.0, (1, 1))
        ok, _ = criterion_check(cert, cfg, k=9)
        assert ok

    def test_c1_reject(self):
        cfg = EngineConfig(criterion=Criterion.C1, mu=ErrorSchedule(0.1, 1.001))
        cert = InexactCertificate(0.2, 0.0, 1.0, 1.0, (1, 1))
        ok, reason = criterion_check(cert, cfg, k=9)
        assert not ok and "x-block" in reason

    def test_c2_zero_certificate_accepts(self):
        cfg = EngineConfig(criterion=Criterion.C2, tau=1.0, mu=ErrorSchedule(0.1, 1.001))
        cert = InexactCertificate(0.0, 0.0, 5.0, 5.0, (1, 1))
        assert criterion_check(cert, cfg, k=0)[0]

    def test_c2_bound_reject(self):
        cfg = EngineConfig(criterion=Criterion.C2, tau=1.0, mu=ErrorSchedule(0.1, 1.001))
        cert = InexactCertificate(0.2, 0.0, 1.0, 1.0, (1, 1))
        assert not criterion_check(cert, cfg, k=0)[0]

    def test_c2_floor_relaxation(self):
        cfg = EngineConfig(criterion=Criterion.C2, tau=1.0, mu=ErrorSchedule(0.1, 1.001))
        cert = InexactCertificate(0.2, 0.0, 1.0, 1.0, (1, 1), xi_floor=0.25)
        assert criterion_check(cert, cfg, k=0)[0]


class TestOuterIterate:
    def test_multiplier_formula_one_step(self):
        toy = QuadraticToy(1.0, 2.0, 0.5)
        cfg = toy_config()
        state = (toy.a.copy(), toy.b.copy(), np.zeros(1))
        oo = outer_iterate(toy, state, cfg, k=0)
        x1, y1, z1 = oo.state
        expected = cfg.tau * cfg.sigma * (x1 + y1 - toy.c)
        assert np.array_equal(z1, expected)

    def test_multiplier_identity_exact(self):
        toy = QuadraticToy([1.0, -2.0], [0.3, 0.7], [0.5, 0.1])
        cfg = toy_config()
        state = (toy.a.copy(), toy.b.copy(), np.zeros(2))
        for k in range(5):
            oo = outer_iterate(toy, state, cfg, k)
            x1, y1, z1 = oo.state
            # bitwise: recomputing the step reproduces the multiplier
            assert np.array_equal(z1, state[2] + cfg.tau * cfg.sigma * toy.constraint(x1, y1))
            state = oo.state

    def test_fixed_point_stays(self):
        toy = QuadraticToy(1.0, 2.0, 0.5)
        xs, ys, zs = toy.kkt_solution()
        cfg = toy_config()
        oo = outer_iterate(toy, (xs, ys, zs), cfg, k=0)
        assert oo.h_norm <= 1e-14
        assert oo.certificate.xi_norm <= 1e-14
        assert np.allclose(oo.state[0], xs, atol=1e-14)


class TestSolve:
    def test_exact_mode_reaches_kkt(self):
        toy = QuadraticToy([1.0, 2.0], [3.0, -1.0], [0.5, 0.5])
        xs, ys, zs = toy.kkt_solution()
        cfg = toy_config(k_max=2000)

        def stop(state, record):
            return record.h_norm < 1e-12 and np.linalg.norm(state[0] - xs) < 1e-10

        res = solve(toy, cfg, (toy.a.copy(), toy.b.copy(), np.zeros(2)), stop=stop)
        assert res.status is SolveStatus.CONVERGED
        assert np.linalg.norm(res.x - xs) <= 1e-8
        assert np.linalg.norm(res.y - ys) <= 1e-8
        assert np.linalg.norm(res.z - zs) <= 1e-8

    def test_kmax_zero(self):
        toy = QuadraticToy(1.0, 2.0, 0.5)
        res = solve(toy, toy_config(k_max=0), (toy.a.copy(), toy.b.copy(), np.zeros(1)))
        assert res.status is SolveStatus.ITERATION_LIMIT
        assert res.trace == []

    def test_matches_reference_admm_iterate_by_iterate(self):
        a = np.array([1.0, 2.0, -0.5])
        b = np.array([3.0, -1.0, 0.25])
        c = np.array([0.5, 0.5, 1.5])
        toy = QuadraticToy(a, b, c)
        sigma, tau = 1.3, 1.618
        cfg = toy_config(sigma=sigma, tau=tau, k_max=100)
        res = solve(toy, cfg, (a.copy(), b.copy(), np.zeros(3)))
        ref = reference_admm(a, b, c, sigma, tau, np.zeros(3), 100)
        state = (a.copy(), b.copy(), np.zeros(3))
        # replay and compare every iterate against the oracle
        for k, (rx, ry, rz) in enumerate(ref):
            oo = outer_iterate(toy, state, cfg, k)
            state = oo.state
            assert np.linalg.norm(state[0] - rx) <= 1e-12
            assert np.linalg.norm(state[1] - ry) <= 1e-12
            assert np.linalg.norm(state[2] - rz) <= 1e-12
        assert res.iterations == 100

    def test_c1_zero_schedule_matches_exact_bitwise(self):
        a, b, c = np.array([1.0]), np.array([2.0]), np.array([0.5])
        cfg_exact = toy_config(k_max=50)
        cfg_c1 = toy_config(
            k_max=50, criterion=Criterion.C1, mu=ErrorSchedule.zero(), nu=ErrorSchedule.zero()
        )
        res_e = solve(QuadraticToy(a, b, c), cfg_exact, (a.copy(), b.copy(), np.zeros(1)))
        res_c = solve(QuadraticToy(a, b, c), cfg_c1, (a.copy(), b.copy(), np.zeros(1)))
        assert np.array_equal(res_e.x, res_c.x)
        assert np.array_equal(res_e.y, res_c.y)
        assert np.array_equal(res_e.z, res_c.z)

    def test_inexact_c1_converges_and_certificates_admissible(self):
        toy = QuadraticToy([1.0, 2.0], [3.0, -1.0], [0.5, 0.5], inexact_fraction=0.5, seed=3)
        # the iterate error floor tracks the schedule tail, so decay fast
        cfg = toy_config(
            criterion=Criterion.C1,
            mu=ErrorSchedule(0.1, 2.0),
            nu=ErrorSchedule(0.1, 2.0),
            k_max=3000,
        )
        res = solve(toy, cfg, (toy.a.copy(), toy.b.copy(), np.zeros(2)))
        xs, ys, zs = toy.kkt_solution()
        assert np.linalg.norm(res.x - xs) <= 1e-6
        for record in res.trace:
            cert = InexactCertificate(
                record.xi_norm,
                record.eta_norm,
                record.dx_metric,
                record.dy_metric,
                (record.inner_x, record.inner_y),
                record.xi_floor,
                record.eta_floor,
            )
            assert criterion_check(cert, cfg, record.k)[0]

    def test_inexact_c2_converges(self):
        toy = QuadraticToy([1.0, 2.0], [3.0, -1.0], [0.5, 0.5], inexact_fraction=0.5, seed=4)
        sched = ErrorSchedule(0.09, 1.2)
        cfg = toy_config(
            criterion=Criterion.C2, tau=1.6, mu=sched, nu=sched, k_max=3000
        )
        res = solve(toy, cfg, (toy.a.copy(), toy.b.copy(), np.zeros(2)))
        xs, _, _ = toy.kkt_solution()
        assert np.linalg.norm(res.x - xs) <= 1e-6

    def test_summability_audit_partial_sums(self):
        cfg = EngineConfig(criterion=Criterion.C1, mu=ErrorSchedule(0.1, 1.001))
        ks = np.arange(1, 2001)
        terms = np.minimum(0.1, ks ** (-1.001))
        partial = np.cumsum(terms)
        assert np.all(np.diff(partial) >= 0)
        assert partial[-1] <= cfg.mu.partial_sum_bound()
