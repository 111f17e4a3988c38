"""Generic two-block inexact proximal ADMM engine.

The engine iterates

    x^{k+1} ~ argmin_x  f(x) + <z^k, A* x + B* y^k - c>
                        + (sigma/2) ||A* x + B* y^k - c||^2 + (1/2)||x - x^k||_Pf^2
    y^{k+1} ~ argmin_y  (same with x^{k+1} fixed, proximal term Pg)
    z^{k+1} = z^k + tau * sigma * (A* x^{k+1} + B* y^{k+1} - c)

where each block is minimized only approximately.  A block solver hands
back an explicit subgradient certificate; the engine re-validates it
against the active inexactness criterion:

  * ``c1``    -- absolute: certificate norm <= mu_{k+1}, with summable mu.
  * ``c2``    -- relative: scaled norm <= mu_{k+1} * ||x^{k+1}-x^k||_{Tf},
                 with summable mu.
  * ``c2p``   -- like ``c2`` but only square-summable mu (needs gamma >= 360).
  * ``exact`` -- certificate norm <= 1e-12 * (1 + step metric).

Block variables are flat float vectors; problems pack and unpack their
own structure.  The certificate norm for the relative criteria is
measured with the scaling F = lambda_min(Tf)^{-1} I (and likewise for
the y block), with the problem supplying a cheap lower bound on the
minimum eigenvalue.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

EXACT_TOL = 1e-12


class Criterion(str, enum.Enum):
    C1 = "c1"
    C2 = "c2"
    C2PRIME = "c2p"
    EXACT = "exact"


@dataclass(frozen=True)
class ErrorSchedule:
    """Error-tolerance sequence mu_k = min(amplitude, k^-exponent), k >= 1.

    Amplitude zero is the identically-zero schedule.  The family is
    summable by construction for exponent > 1 and square-summable for
    exponent > 1/2.
    """

    amplitude: float = 0.1
    exponent: float = 1.001

    def __call__(self, k: int) -> float:
        if self.amplitude == 0.0:
            return 0.0
        if k < 1:
            raise ValueError("schedule index starts at 1")
        return min(self.amplitude, float(k) ** (-self.exponent))

    def partial_sum_bound(self, power: int = 1) -> float:
        """Closed-form bound on sum_k mu_k^power (uses min(a, k^-p) <= k^-p)."""
        if self.amplitude == 0.0:
            return 0.0
        q = self.exponent * power
        if q <= 1.0:
            return math.inf
        return 1.0 + 1.0 / (q - 1.0)

    @staticmethod
    def zero() -> "ErrorSchedule":
        return ErrorSchedule(amplitude=0.0)


@dataclass(frozen=True)
class EngineConfig:
    sigma: float = 1.0
    tau: float = 1.618
    criterion: Criterion = Criterion.C1
    mu: ErrorSchedule = ErrorSchedule()
    nu: ErrorSchedule = ErrorSchedule()
    gamma: float = 360.0  # used by criterion c2p only
    eta_tol: float = 1e-6
    k_max: int = 20000
    inner_cap: int = 100
    allow_large_tau: bool = False  # accept tau in [golden, 2) without guarantee
    relax_c2: bool = True  # allow the residual-floor relaxation of c2
    scaling_choice: str = "lambda-min-identity"


@dataclass(frozen=True)
class ConfigViolation:
    name: str
    message: str


class ValidationError(Exception):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"[{v.name}] {v.message}" for v in self.violations)
        super().__init__(f"invalid solver configuration: {lines}")


def _schedule_violations(name: str, sched: ErrorSchedule, square_summable: bool):
    out = []
    if sched.amplitude < 0:
        out.append(ConfigViolation("schedule-amplitude", f"{name} amplitude must be >= 0"))
    elif sched.amplitude > 0.1:
        out.append(
            ConfigViolation(
                "schedule-amplitude",
                f"{name} amplitude {sched.amplitude:g} exceeds the 0.1 cap",
            )
        )
    if sched.amplitude > 0:
        if square_summable:
            if sched.exponent <= 0.5:
                out.append(
                    ConfigViolation(
                        "schedule-square-summable",
                        f"{name} exponent {sched.exponent:g} must be > 1/2 for a "
                        "square-summable schedule",
                    )
                )
        elif sched.exponent <= 1.0:
            out.append(
                ConfigViolation(
                    "schedule-summable",
                    f"{name} exponent {sched.exponent:g} must be > 1 for a summable "
                    "schedule",
                )
            )
    return out


def validate_config(cfg: EngineConfig) -> list[ConfigViolation]:
    """Check every parameter bound the convergence theory imposes.

    Returns the (possibly empty) list of violations; use
    :func:`ensure_valid` to raise instead.
    """
    out: list[ConfigViolation] = []
    if not cfg.sigma > 0:
        out.append(ConfigViolation("penalty-positive", f"sigma must be > 0, got {cfg.sigma:g}"))
    if not cfg.eta_tol > 0:
        out.append(ConfigViolation("tolerance-positive", f"eta_tol must be > 0, got {cfg.eta_tol:g}"))
    if cfg.k_max < 0:
        out.append(ConfigViolation("iteration-cap", f"k_max must be >= 0, got {cfg.k_max}"))
    if cfg.inner_cap < 1:
        out.append(ConfigViolation("inner-cap", f"inner_cap must be >= 1, got {cfg.inner_cap}"))
    if cfg.scaling_choice != "lambda-min-identity":
        out.append(
            ConfigViolation(
                "scaling-choice", f"unsupported certificate scaling {cfg.scaling_choice!r}"
            )
        )

    if not 0.0 < cfg.tau < 2.0:
        out.append(
            ConfigViolation("step-size-range", f"tau must lie in (0, 2), got {cfg.tau:g}")
        )
    elif cfg.tau >= GOLDEN and not cfg.allow_large_tau:
        out.append(
            ConfigViolation(
                "step-size-needs-override",
                f"tau {cfg.tau:g} >= (1+sqrt(5))/2 has no a-priori convergence "
                "guarantee; set allow_large_tau to run anyway",
            )
        )

    if cfg.criterion is Criterion.EXACT:
        return out

    square = cfg.criterion is Criterion.C2PRIME
    out += _schedule_violations("mu", cfg.mu, square)
    out += _schedule_violations("nu", cfg.nu, square)
    sup = max(cfg.mu.amplitude, cfg.nu.amplitude)

    if cfg.criterion is Criterion.C2 and 0.0 < cfg.tau < 2.0:
        cap = min(0.1, (2.0 - cfg.tau) / 4.0)
        if sup > cap:
            out.append(
                ConfigViolation(
                    "relative-error-bound",
                    f"criterion c2 needs max(mu_k, nu_k) <= min(0.1, (2-tau)/4) = "
                    f"{cap:g}, got {sup:g}",
                )
            )

    if cfg.criterion is Criterion.C2PRIME:
        if cfg.gamma < 360.0:
            out.append(
                ConfigViolation(
                    "gamma-lower-bound",
                    f"criterion c2p needs gamma >= 360, got {cfg.gamma:g}",
                )
            )
        elif 0.0 < cfg.tau < 2.0:
            if cfg.tau > 1.6 and not cfg.allow_large_tau:
                out.append(
                    ConfigViolation(
                        "step-size-needs-override",
                        f"criterion c2p guarantees convergence only for tau <= 1.6; "
                        f"got {cfg.tau:g} (set allow_large_tau to run anyway)",
                    )
                )
            cap = min(1.0 / (8.0 * cfg.gamma), (2.0 - cfg.tau - 2.5 / cfg.gamma) / (3.0 * cfg.gamma))
            if cap > 0 and sup * sup > cap:
                out.append(
                    ConfigViolation(
                        "relative-error-bound",
                        "criterion c2p needs max(mu_k^2, nu_k^2) <= "
                        f"min(1/(8 gamma), (2 - tau - 2.5/gamma)/(3 gamma)) = {cap:g}, "
                        f"got {sup * sup:g}",
                    )
                )
    return out


def ensure_valid(cfg: EngineConfig) -> EngineConfig:
    violations = validate_config(cfg)
    if violations:
        raise ValidationError(violations)
    return cfg


def gamma_for_c1(cfg: EngineConfig) -> float:
    """Smallest gamma with max(mu_k, nu_k) <= gamma * min(1/6, (2-tau)/4).

    The absolute criterion admits any gamma > 0; this picks the tightest
    one for the descent verification, or 1 for zero schedules.
    """
    sup = max(cfg.mu.amplitude, cfg.nu.amplitude)
    if sup == 0.0:
        return 1.0
    return sup / min(1.0 / 6.0, (2.0 - cfg.tau) / 4.0)


# ---------------------------------------------------------------------------
# certificates and block problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubproblemRequest:
    """What the engine asks of a block solver for one outer iteration."""

    sigma: float
    k: int  # outer iteration index, 0-based; schedules are read at k+1
    criterion: Criterion
    bound: float  # mu_{k+1} (x block) or nu_{k+1} (y block)
    inner_cap: int
    relax: bool = True
    exact_tol: float = EXACT_TOL


@dataclass
class BlockOutcome:
    """An approximate block minimizer with its admissibility certificate.

    ``norm`` is measured in the norm the active criterion compares
    (plain for c1/exact, the F/G-scaled norm for c2/c2p); ``metric`` is
    the step length in the block's T-metric; ``floor`` is the optional
    relaxation floor in the same units as ``norm``.
    """

    value: np.ndarray
    norm: float
    metric: float
    sweeps: int
    floor: float = 0.0
    cert_vec: np.ndarray | None = None


@dataclass(frozen=True)
class InexactCertificate:
    xi_norm: float
    eta_norm: float
    dx_metric: float
    dy_metric: float
    inner_iterations: tuple[int, int]
    xi_floor: float = 0.0
    eta_floor: float = 0.0


class InnerSolveError(Exception):
    """A block solver hit its sweep cap before the criterion accepted."""

    def __init__(self, message: str, block: str, norm: float, metric: float, sweeps: int):
        self.block = block
        self.norm = norm
        self.metric = metric
        self.sweeps = sweeps
        super().__init__(message)


def accepts_half(
    norm: float,
    metric: float,
    bound: float,
    floor: float,
    criterion: Criterion,
    exact_tol: float = EXACT_TOL,
) -> bool:
    """The single-block admissibility predicate behind every criterion."""
    if criterion is Criterion.EXACT:
        return norm <= exact_tol * (1.0 + metric)
    if criterion is Criterion.C1:
        return norm <= bound
    return norm <= bound * metric or (floor > 0.0 and norm <= floor)


def criterion_check(cert: InexactCertificate, cfg: EngineConfig, k: int) -> tuple[bool, str]:
    """Re-check a certificate against the active criterion at iteration k."""
    mu = cfg.mu(k + 1) if cfg.criterion is not Criterion.EXACT else 0.0
    nu = cfg.nu(k + 1) if cfg.criterion is not Criterion.EXACT else 0.0
    ok_x = accepts_half(cert.xi_norm, cert.dx_metric, mu, cert.xi_floor, cfg.criterion)
    ok_y = accepts_half(cert.eta_norm, cert.dy_metric, nu, cert.eta_floor, cfg.criterion)
    if ok_x and ok_y:
        return True, "accept"
    side = "x" if not ok_x else "y"
    return False, f"{side}-block certificate violates criterion {cfg.criterion.value} at k={k}"


class BlockProblem:
    """Problem surface the engine drives.

    Subclasses implement the two approximate block minimizers, the
    affine constraint residual ``h(x, y) = A* x + B* y - c``, the block
    T-metrics, and the objective ``f(x) + g(y)`` (finite part).  All
    block variables are flat float vectors.
    """

    # set by instantiations that support the theory verification hooks
    theory = None

    def solve_x(self, x, y, z, req: SubproblemRequest) -> BlockOutcome:
        raise NotImplementedError

    def solve_y(self, x_new, y, z, req: SubproblemRequest) -> BlockOutcome:
        raise NotImplementedError

    def constraint(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def objective(self, x, y) -> float:
        raise NotImplementedError

    def metric_x(self, dx, sigma: float) -> float:
        raise NotImplementedError

    def metric_y(self, dy, sigma: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class TheoryEvaluators:
    """Problem-supplied quadratic-form norms used by the verification module.

    Each callable takes ``(delta, sigma)`` and returns the norm of the
    flat block vector in the named operator metric.  ``c_upper`` bounds
    max(||Tg^-1||, 2 ||Tf^-1||) from above for the given sigma.
    """

    norm_x_pf_sf: object  # ||dx||_{Pf + Sigma_f}
    norm_x_pf_half_sf: object  # ||dx||_{Pf + Sigma_f / 2}
    norm_y_tg: object  # ||dy||_{Tg}
    norm_y_pg_34sg: object  # ||dy||_{Pg + (3/4) Sigma_g}
    c_upper: object  # sigma -> float


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    ITERATION_LIMIT = "iteration-limit"
    INNER_FAILURE = "inner-failure"


@dataclass
class OuterRecord:
    k: int
    h_norm: float
    xi_norm: float
    eta_norm: float
    dx_metric: float
    dy_metric: float
    xi_floor: float
    eta_floor: float
    inner_x: int
    inner_y: int
    objective: float
    sigma: float


@dataclass
class OuterOutcome:
    state: tuple
    certificate: InexactCertificate
    h_norm: float
    h_vec: np.ndarray
    out_x: BlockOutcome
    out_y: BlockOutcome


@dataclass
class SolveResult:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: SolveStatus
    iterations: int
    trace: list
    failure: InnerSolveError | None = None


def outer_iterate(
    problem: BlockProblem,
    state: tuple,
    cfg: EngineConfig,
    k: int,
    sigma: float | None = None,
    multiplier_step_scale: float = 1.0,
) -> OuterOutcome:
    """One outer sweep: x block, y block, multiplier ascent.

    ``multiplier_step_scale`` deliberately corrupts the multiplier step
    and exists only for the fault-injection harness; leave it at 1.
    """
    sigma = cfg.sigma if sigma is None else sigma
    x, y, z = state
    exact = cfg.criterion is Criterion.EXACT
    req_x = SubproblemRequest(
        sigma=sigma,
        k=k,
        criterion=cfg.criterion,
        bound=0.0 if exact else cfg.mu(k + 1),
        inner_cap=cfg.inner_cap,
        relax=cfg.relax_c2,
    )
    out_x = problem.solve_x(x, y, z, req_x)
    req_y = replace(req_x, bound=0.0 if exact else cfg.nu(k + 1))
    out_y = problem.solve_y(out_x.value, y, z, req_y)

    cert = InexactCertificate(
        xi_norm=out_x.norm,
        eta_norm=out_y.norm,
        dx_metric=out_x.metric,
        dy_metric=out_y.metric,
        inner_iterations=(out_x.sweeps, out_y.sweeps),
        xi_floor=out_x.floor,
        eta_floor=out_y.floor,
    )
    ok, reason = criterion_check(cert, cfg, k)
    if not ok:
        raise InnerSolveError(
            f"certificate failed re-validation: {reason}",
            block=reason[0],
            norm=cert.xi_norm if reason[0] == "x" else cert.eta_norm,
            metric=cert.dx_metric if reason[0] == "x" else cert.dy_metric,
            sweeps=max(cert.inner_iterations),
        )

    h = problem.constraint(out_x.value, out_y.value)
    z_new = z + (cfg.tau * sigma * multiplier_step_scale) * h
    new_state = (out_x.value, out_y.value, z_new)
    return OuterOutcome(new_state, cert, float(np.linalg.norm(h)), h, out_x, out_y)


def solve(
    problem: BlockProblem,
    cfg: EngineConfig,
    state0: tuple,
    stop=None,
    sigma_rule=None,
    recorder=None,
    multiplier_step_scale: float = 1.0,
) -> SolveResult:
    """Run the outer loop until ``stop`` accepts, k_max, or an inner failure.

    ``stop(state, record)`` is the caller's convergence predicate;
    ``sigma_rule(k, record)`` may return a replacement penalty parameter
    for the next iteration; ``recorder`` (see :mod:`ipadmm.verify`)
    captures the per-iteration quantities the theory checks consume.
    """
    ensure_valid(cfg)
    state = state0
    sigma = cfg.sigma
    trace: list[OuterRecord] = []
    status = SolveStatus.ITERATION_LIMIT
    failure = None
    h_prev: np.ndarray | None = None

    for k in range(cfg.k_max):
        try:
            oo = outer_iterate(
                problem, state, cfg, k, sigma=sigma, multiplier_step_scale=multiplier_step_scale
            )
        except InnerSolveError as err:
            status = SolveStatus.INNER_FAILURE
            failure = err
            break
        cert = oo.certificate
        record = OuterRecord(
            k=k,
            h_norm=oo.h_norm,
            xi_norm=cert.xi_norm,
            eta_norm=cert.eta_norm,
            dx_metric=cert.dx_metric,
            dy_metric=cert.dy_metric,
            xi_floor=cert.xi_floor,
            eta_floor=cert.eta_floor,
            inner_x=cert.inner_iterations[0],
            inner_y=cert.inner_iterations[1],
            objective=problem.objective(oo.state[0], oo.state[1]),
            sigma=sigma,
        )
        trace.append(record)
        if recorder is not None:
            # B* dy^{k+1} = h(x^{k+1}, y^{k+1}) - h(x^{k+1}, y^k)
            h_mid = problem.constraint(oo.state[0], state[1])
            recorder.record(k, state, oo, h_prev, h_mid, sigma, cfg)
        h_prev = oo.h_vec
        state = oo.state
        if stop is not None and stop(state, record):
            status = SolveStatus.CONVERGED
            break
        if sigma_rule is not None:
            new_sigma = sigma_rule(k, record)
            if new_sigma is not None and new_sigma > 0:
                sigma = float(new_sigma)

    return SolveResult(
        x=state[0],
        y=state[1],
        z=state[2],
        status=status,
        iterations=len(trace),
        trace=trace,
        failure=failure,
    )
