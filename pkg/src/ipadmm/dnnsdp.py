"""Dual solvers for doubly nonnegative SDPs.

Primal problem over symmetric n x n matrices:

    max  -<C, X>
    s.t. AE X = bE,  AI X >= bI,  X PSD,  X - M entrywise nonnegative.

The dual is a four-block separable program in (y_I, Z, y_E, S) with the
single coupling constraint AI* y_I + Z + AE* y_E + S = C; the solvers
here regroup it into two blocks and drive :mod:`ipadmm.engine`:

  * ``alg1`` -- no inequality rows: x block (Z, y_E), y block S,
    proximal term eps on Z; the S update is an exact PSD projection.
  * ``alg2`` -- inequality rows handled in the dual directly: x block
    (y_I, Z) with the linearizing proximal term sigma (rho I - AI AI*)
    on y_I, y block (y_E, S) with eps on S.
  * ``alg3`` -- slack reformulation AI X - x = bI: x block (y_I, z, Z)
    with eps sigma on y_I and the y_I step solved by conjugate
    gradients, y block (y_E, S) as in alg2; two multipliers (X, x).

Each inner block is minimized by alternating its group variables; the
alternation yields an explicit subgradient certificate whose norm the
engine's criterion bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .engine import (
    BlockOutcome,
    BlockProblem,
    Criterion,
    EngineConfig,
    ConfigViolation,
    InnerSolveError,
    SolveStatus,
    SubproblemRequest,
    TheoryEvaluators,
    ValidationError,
    accepts_half,
    ensure_valid,
)
from .linalg import (
    CholeskyFactor,
    ConstraintMap,
    cg_solve,
    frob_inner,
    project_nonneg,
    project_nonneg_vec,
    project_psd,
    symmetrize,
)

VARIANTS = ("alg1", "alg2", "alg3")


@dataclass
class DnnsdpProblem:
    """Data (C, M, AE, bE, AI, bI) of a doubly nonnegative SDP."""

    C: np.ndarray
    AE: ConstraintMap
    bE: np.ndarray
    AI: ConstraintMap | None = None
    bI: np.ndarray | None = None
    M: np.ndarray | None = None

    def __post_init__(self):
        self.C = symmetrize(linalg.require_finite(self.C, "C"))
        n = self.C.shape[0]
        if self.AE.n != n:
            raise ValueError("AE dimension does not match C")
        self.bE = linalg.require_finite(np.asarray(self.bE, dtype=float).ravel(), "bE")
        if self.bE.shape[0] != self.AE.m:
            raise ValueError("bE length does not match AE")
        if self.AI is None:
            self.AI = ConstraintMap(n, [])
        if self.AI.n != n:
            raise ValueError("AI dimension does not match C")
        if self.bI is None:
            self.bI = np.zeros(self.AI.m)
        self.bI = linalg.require_finite(np.asarray(self.bI, dtype=float).ravel(), "bI")
        if self.bI.shape[0] != self.AI.m:
            raise ValueError("bI length does not match AI")
        if self.M is None:
            self.M = np.zeros((n, n))
        self.M = symmetrize(linalg.require_finite(self.M, "M"))
        if self.M.shape != (n, n):
            raise ValueError("M dimension does not match C")
        # surjectivity of the equality map: AE AE* must be positive definite
        try:
            CholeskyFactor(self.AE.gram())
        except linalg.SingularOperatorError as err:
            raise ValueError(
                f"equality constraint map is not surjective (Gram pivot {err.pivot})"
            ) from err

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def mE(self) -> int:
        return self.AE.m

    @property
    def mI(self) -> int:
        return self.AI.m


@dataclass
class DualIterate:
    """The iterate tuple shared by all three solver variants.

    ``z_slack`` and ``x_slack`` are populated by alg3 only.
    """

    y_I: np.ndarray
    Z: np.ndarray
    y_E: np.ndarray
    S: np.ndarray
    X: np.ndarray
    z_slack: np.ndarray | None = None
    x_slack: np.ndarray | None = None

    @staticmethod
    def zeros(prob: DnnsdpProblem, variant: str = "alg1") -> "DualIterate":
        n = prob.n
        it = DualIterate(
            y_I=np.zeros(prob.mI),
            Z=np.zeros((n, n)),
            y_E=np.zeros(prob.mE),
            S=np.zeros((n, n)),
            X=np.zeros((n, n)),
        )
        if variant == "alg3":
            it.z_slack = np.zeros(prob.mI)
            it.x_slack = np.zeros(prob.mI)
        return it


@dataclass(frozen=True)
class ResidualReport:
    """Normalized KKT residuals; ``eta`` is the max over populated entries."""

    eta_P: float
    eta_D: float
    eta_S: float
    eta_K: float
    eta_Sstar: float
    eta_Kstar: float
    eta_C1: float
    eta_C2: float
    eta_I: float
    eta_Istar: float
    eta: float

    def components(self) -> dict:
        return {
            "eta_P": self.eta_P,
            "eta_D": self.eta_D,
            "eta_S": self.eta_S,
            "eta_K": self.eta_K,
            "eta_Sstar": self.eta_Sstar,
            "eta_Kstar": self.eta_Kstar,
            "eta_C1": self.eta_C1,
            "eta_C2": self.eta_C2,
            "eta_I": self.eta_I,
            "eta_Istar": self.eta_Istar,
        }


def kkt_residuals(prob: DnnsdpProblem, it: DualIterate) -> ResidualReport:
    """Relative KKT residuals of an approximate primal-dual point.

    Uses the 8-component set when the problem has no inequality rows and
    the 10-component set otherwise; every denominator is 1 + the scale
    of the quantity measured.
    """
    n = prob.n
    if it.X.shape != (n, n) or it.S.shape != (n, n) or it.Z.shape != (n, n):
        raise ValueError("iterate matrix dimensions do not match the problem")
    if it.y_E.shape[0] != prob.mE or it.y_I.shape[0] != prob.mI:
        raise ValueError("iterate multiplier dimensions do not match the problem")

    X, S, Z, y_E, y_I = it.X, it.S, it.Z, it.y_E, it.y_I
    norm_X = float(np.linalg.norm(X))
    norm_S = float(np.linalg.norm(S))
    norm_Z = float(np.linalg.norm(Z))
    norm_C = float(np.linalg.norm(prob.C))

    eta_P = float(
        np.linalg.norm(prob.AE.apply(X) - prob.bE) / (1.0 + np.linalg.norm(prob.bE))
    )
    dual_res = prob.AE.adjoint(y_E) + S + Z - prob.C
    if prob.mI > 0:
        dual_res = dual_res + prob.AI.adjoint(y_I)
    eta_D = float(np.linalg.norm(dual_res)) / (1.0 + norm_C)
    eta_S = float(np.linalg.norm(project_psd(-X))) / (1.0 + norm_X)
    eta_K = float(np.linalg.norm(np.maximum(prob.M - X, 0.0))) / (1.0 + norm_X)
    eta_Sstar = float(np.linalg.norm(project_psd(-S))) / (1.0 + norm_S)
    eta_Kstar = float(np.linalg.norm(np.maximum(-Z, 0.0))) / (1.0 + norm_Z)
    eta_C1 = abs(frob_inner(X, S)) / (1.0 + norm_X + norm_S)
    eta_C2 = abs(frob_inner(X - prob.M, Z)) / (1.0 + norm_X + norm_Z)

    if prob.mI > 0:
        eta_I = float(
            np.linalg.norm(np.maximum(prob.bI - prob.AI.apply(X), 0.0))
            / (1.0 + np.linalg.norm(prob.bI))
        )
        eta_Istar = float(
            np.linalg.norm(np.maximum(-y_I, 0.0)) / (1.0 + np.linalg.norm(y_I))
        )
    else:
        eta_I = 0.0
        eta_Istar = 0.0

    parts = [eta_P, eta_D, eta_S, eta_K, eta_Sstar, eta_Kstar, eta_C1, eta_C2]
    if prob.mI > 0:
        parts += [eta_I, eta_Istar]
    return ResidualReport(
        eta_P, eta_D, eta_S, eta_K, eta_Sstar, eta_Kstar, eta_C1, eta_C2, eta_I, eta_Istar,
        max(parts),
    )


# ---------------------------------------------------------------------------
# penalty adaptation and restart
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdaptationPolicy:
    """Residual-balancing schedule for the penalty parameter sigma."""

    window: int = 50
    imbalance_threshold: float = 5.0
    scale_factor: float = 1.4
    sigma_min: float = 1e-4
    sigma_max: float = 1e4
    restart_window: int = 300
    restart_stall_fraction: float = 0.01

    def __post_init__(self):
        if self.window < 1 or self.restart_window < 1:
            raise ValueError("adaptation windows must be >= 1")
        if self.imbalance_threshold <= 1 or self.scale_factor <= 1:
            raise ValueError("threshold and factor must be > 1")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("sigma bounds must satisfy 0 < sigma_min < sigma_max")
        if not 0 < self.restart_stall_fraction < 1:
            raise ValueError("restart_stall_fraction must lie in (0, 1)")


def adapt_sigma(reports, sigma: float, policy: AdaptationPolicy) -> float:
    """Rescale sigma when primal and dual residuals drift apart.

    ``reports`` is the trailing window of :class:`ResidualReport`; the
    primal/dual imbalance ratio is averaged over it.
    """
    if not reports:
        raise ValueError("adaptation window is empty")
    ratios = []
    for r in reports:
        primal = max(r.eta_P, r.eta_S, r.eta_K, r.eta_I)
        dual = max(r.eta_D, r.eta_Sstar, r.eta_Kstar, r.eta_Istar, 1e-16)
        ratios.append(primal / dual)
    r_mean = float(np.mean(ratios))
    if r_mean > policy.imbalance_threshold:
        return min(sigma * policy.scale_factor, policy.sigma_max)
    if r_mean < 1.0 / policy.imbalance_threshold:
        return max(sigma / policy.scale_factor, policy.sigma_min)
    return sigma


def restart_check(etas, policy: AdaptationPolicy) -> bool:
    """True when eta failed to decrease by the stall fraction over the window."""
    if len(etas) < policy.restart_window:
        return False
    start = etas[-policy.restart_window]
    end = etas[-1]
    if start <= 0.0:
        return False
    return end > (1.0 - policy.restart_stall_fraction) * start


# ---------------------------------------------------------------------------
# shared block machinery
# ---------------------------------------------------------------------------


def _delta_bound(sigma: float, eps: float, lam_min_gram: float) -> float:
    """Lower bound on the minimum eigenvalue of the (y_E, S)-type metric."""
    root = math.sqrt(sigma + eps)
    return (root - math.sqrt(sigma)) * min(root, sigma * lam_min_gram / root)


def _scaled(norm: float, req: SubproblemRequest, lam: float) -> float:
    """Certificate norm in the units the active criterion compares."""
    if req.criterion in (Criterion.C2, Criterion.C2PRIME):
        return norm / math.sqrt(lam)
    return norm


def _floor(req: SubproblemRequest, lam: float, floor_plain: float) -> float:
    if req.criterion in (Criterion.C2, Criterion.C2PRIME) and req.relax:
        return floor_plain / math.sqrt(lam)
    return 0.0


class _DnnsdpBlocks(BlockProblem):
    """Shared state for the three variant block problems."""

    variant = ""

    def __init__(self, prob: DnnsdpProblem, eps: float = 1e-5, drop_proximal: bool = False):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.prob = prob
        self.eps = float(eps)
        self.drop_proximal = drop_proximal
        self.chol = CholeskyFactor(prob.AE.gram())
        self.lamE_min = prob.AE.lambda_min_gram()
        # plain-norm relaxation floor, refreshed each outer iteration
        self.floor_hint = 0.0

    def delta(self, sigma: float) -> float:
        return _delta_bound(sigma, self.eps, self.lamE_min)

    def set_floor_hint(self, report: ResidualReport):
        self.floor_hint = 0.1 * max(report.eta_P, report.eta_D)

    def iterate_from_state(self, state) -> DualIterate:
        raise NotImplementedError


def _sweep_yE_S(
    blocks: _DnnsdpBlocks,
    x_fixed_part: np.ndarray,
    yEk: np.ndarray,
    Sk: np.ndarray,
    Xk: np.ndarray,
    req: SubproblemRequest,
):
    """Alternating (y_E, S) minimization shared by alg2 and alg3.

    ``x_fixed_part`` is the frozen contribution AI* y_I + Z - C of the
    x block to the coupling constraint.  Returns
    (y_E, S, eta_vec, norm, metric, sweeps).
    """
    prob, eps, sigma = blocks.prob, blocks.eps, req.sigma
    lam = blocks.delta(sigma)
    floor = _floor(req, lam, blocks.floor_hint)
    rhs0 = (prob.bE - prob.AE.apply(Xk)) / sigma - prob.AE.apply(x_fixed_part)
    denom = sigma if blocks.drop_proximal else sigma + eps
    S_prev = Sk
    for j in range(1, req.inner_cap + 1):
        yE = blocks.chol.solve(rhs0 - prob.AE.apply(S_prev))
        AEt_yE = prob.AE.adjoint(yE)
        arg = sigma * (-x_fixed_part - AEt_yE) - Xk
        if not blocks.drop_proximal:
            arg = arg + eps * Sk
        S = project_psd(arg / denom)
        eta_vec = sigma * prob.AE.apply(S - S_prev)
        norm = float(np.linalg.norm(eta_vec))
        dyE = yE - yEk
        dS = S - Sk
        metric = math.sqrt(
            max(
                sigma * float(np.linalg.norm(prob.AE.adjoint(dyE) + dS)) ** 2
                + eps * float(np.linalg.norm(dS)) ** 2,
                0.0,
            )
        )
        scaled = _scaled(norm, req, lam)
        if accepts_half(scaled, metric, req.bound, floor, req.criterion, req.exact_tol):
            return yE, S, eta_vec, scaled, metric, j, floor
        S_prev = S
    raise InnerSolveError(
        f"(y_E, S) block hit the sweep cap {req.inner_cap} at k={req.k} "
        f"(norm {scaled:g}, metric {metric:g})",
        block="y",
        norm=scaled,
        metric=metric,
        sweeps=req.inner_cap,
    )


# ---------------------------------------------------------------------------
# alg1: no inequality rows
# ---------------------------------------------------------------------------


class Alg1Blocks(_DnnsdpBlocks):
    """Three-block regrouping for problems without inequality rows.

    Flat layout: x = [vec(Z), y_E], y = vec(S), multiplier z = vec(X).
    """

    variant = "alg1"

    def __init__(self, prob: DnnsdpProblem, eps: float = 1e-5, drop_proximal: bool = False):
        if prob.mI != 0:
            raise ValueError("alg1 requires a problem with no inequality rows")
        super().__init__(prob, eps, drop_proximal)
        n, mE = prob.n, prob.mE
        self._nn = n * n
        self.theory = TheoryEvaluators(
            norm_x_pf_sf=lambda dx, sigma: math.sqrt(self.eps) * np.linalg.norm(dx[: self._nn]),
            norm_x_pf_half_sf=lambda dx, sigma: math.sqrt(self.eps)
            * np.linalg.norm(dx[: self._nn]),
            norm_y_tg=lambda dy, sigma: math.sqrt(sigma) * np.linalg.norm(dy),
            norm_y_pg_34sg=lambda dy, sigma: 0.0,
            c_upper=lambda sigma: max(1.0 / sigma, 2.0 / self.delta(sigma)),
        )

    def pack_x(self, Z: np.ndarray, yE: np.ndarray) -> np.ndarray:
        return np.concatenate([Z.ravel(), yE])

    def unpack_x(self, x: np.ndarray):
        n = self.prob.n
        return x[: self._nn].reshape(n, n), x[self._nn :]

    def iterate_from_state(self, state) -> DualIterate:
        x, y, z = state
        Z, yE = self.unpack_x(x)
        n = self.prob.n
        return DualIterate(
            y_I=np.zeros(0), Z=Z, y_E=yE, S=y.reshape(n, n), X=z.reshape(n, n)
        )

    def pack_reference(self, it: DualIterate):
        return (self.pack_x(it.Z, it.y_E), it.S.ravel().copy(), it.X.ravel().copy())

    def solve_x(self, x, y, z, req: SubproblemRequest) -> BlockOutcome:
        prob, eps, sigma = self.prob, self.eps, req.sigma
        Zk, yEk = self.unpack_x(x)
        Sk = y.reshape(prob.n, prob.n)
        Xk = z.reshape(prob.n, prob.n)
        lam = self.delta(sigma)
        floor = _floor(req, lam, self.floor_hint)

        base = sigma * (prob.C - Sk) - Xk + prob.M
        if not self.drop_proximal:
            base = base + eps * Zk
        denom = sigma if self.drop_proximal else sigma + eps
        rhs0 = (prob.bE - prob.AE.apply(Xk)) / sigma - prob.AE.apply(Sk - prob.C)

        yE_prev = yEk
        for j in range(1, req.inner_cap + 1):
            Z = project_nonneg((base - sigma * prob.AE.adjoint(yE_prev)) / denom)
            yE = self.chol.solve(rhs0 - prob.AE.apply(Z))
            xi_mat = sigma * prob.AE.adjoint(yE - yE_prev)
            norm = float(np.linalg.norm(xi_mat))
            dZ = Z - Zk
            metric = math.sqrt(
                max(
                    sigma
                    * float(np.linalg.norm(dZ + prob.AE.adjoint(yE - yEk))) ** 2
                    + eps * float(np.linalg.norm(dZ)) ** 2,
                    0.0,
                )
            )
            scaled = _scaled(norm, req, lam)
            if accepts_half(scaled, metric, req.bound, floor, req.criterion, req.exact_tol):
                cert = np.concatenate([xi_mat.ravel(), np.zeros(prob.mE)])
                return BlockOutcome(self.pack_x(Z, yE), scaled, metric, j, floor, cert)
            yE_prev = yE
        raise InnerSolveError(
            f"(Z, y_E) block hit the sweep cap {req.inner_cap} at k={req.k} "
            f"(norm {scaled:g}, metric {metric:g})",
            block="x",
            norm=scaled,
            metric=metric,
            sweeps=req.inner_cap,
        )

    def solve_y(self, x_new, y, z, req: SubproblemRequest) -> BlockOutcome:
        # the S subproblem has the exact closed form; its certificate is 0
        prob, sigma = self.prob, req.sigma
        Z, yE = self.unpack_x(x_new)
        Sk = y.reshape(prob.n, prob.n)
        Xk = z.reshape(prob.n, prob.n)
        S = project_psd(prob.C - prob.AE.adjoint(yE) - Z - Xk / sigma)
        metric = math.sqrt(sigma) * float(np.linalg.norm(S - Sk))
        return BlockOutcome(S.ravel(), 0.0, metric, 1, 0.0, np.zeros(S.size))

    def constraint(self, x, y) -> np.ndarray:
        prob = self.prob
        Z, yE = self.unpack_x(x)
        S = y.reshape(prob.n, prob.n)
        return (Z + prob.AE.adjoint(yE) + S - prob.C).ravel()

    def objective(self, x, y) -> float:
        Z, yE = self.unpack_x(x)
        return -frob_inner(self.prob.M, Z) - float(self.prob.bE @ yE)

    def metric_x(self, dx, sigma: float) -> float:
        dZ, dyE = self.unpack_x(dx)
        return math.sqrt(
            max(
                sigma * float(np.linalg.norm(dZ + self.prob.AE.adjoint(dyE))) ** 2
                + self.eps * float(np.linalg.norm(dZ)) ** 2,
                0.0,
            )
        )

    def metric_y(self, dy, sigma: float) -> float:
        return math.sqrt(sigma) * float(np.linalg.norm(dy))

    def block_objective_x(self, x_cand, x_anchor, y, z, sigma: float) -> float:
        """phi_k value at a candidate (Z, y_E); indicators are 0 on the cone."""
        prob = self.prob
        Z, yE = self.unpack_x(x_cand)
        Zk, _ = self.unpack_x(x_anchor)
        S = y.reshape(prob.n, prob.n)
        X = z.reshape(prob.n, prob.n)
        r = Z + prob.AE.adjoint(yE) + S - prob.C
        val = (
            -frob_inner(prob.M, Z)
            - float(prob.bE @ yE)
            + frob_inner(X, r)
            + 0.5 * sigma * float(np.linalg.norm(r)) ** 2
            + 0.5 * self.eps * float(np.linalg.norm(Z - Zk)) ** 2
        )
        return val

    def block_objective_y(self, y_cand, y_anchor, x_new, z, sigma: float) -> float:
        prob = self.prob
        Z, yE = self.unpack_x(x_new)
        S = y_cand.reshape(prob.n, prob.n)
        X = z.reshape(prob.n, prob.n)
        r = Z + prob.AE.adjoint(yE) + S - prob.C
        return frob_inner(X, r) + 0.5 * sigma * float(np.linalg.norm(r)) ** 2

    def subgradient_audit(self, prev_state, new_state, xi_vec, sigma: float) -> float:
        """Worst violation of the accepted x-certificate's membership.

        The claimed certificate pair (xi, 0) must satisfy
        xi - grad_Z q in N_{K*}(Z) (entrywise <= 0 and complementary to Z)
        and grad_{yE} q = 0, where q is the smooth part of the block
        objective.  Recomputed purely from consecutive outer states.
        """
        prob, eps = self.prob, self.eps
        x0, y0, z0 = prev_state
        x1, _y1, _z1 = new_state
        Zk, _yEk = self.unpack_x(x0)
        Z, yE = self.unpack_x(x1)
        Sk = y0.reshape(prob.n, prob.n)
        Xk = z0.reshape(prob.n, prob.n)
        xi = xi_vec[: prob.n * prob.n].reshape(prob.n, prob.n)
        grad_Z = (
            -prob.M
            + Xk
            + sigma * (Z + prob.AE.adjoint(yE) + Sk - prob.C)
            + eps * (Z - Zk)
        )
        v = xi - grad_Z
        scale = 1.0 + float(np.linalg.norm(v)) + float(np.linalg.norm(Z))
        sign_violation = max(float(np.max(v)), 0.0)
        compl_violation = abs(frob_inner(v, Z)) / scale
        grad_yE = (
            -prob.bE
            + prob.AE.apply(Xk)
            + sigma * prob.AE.apply(prob.AE.adjoint(yE) + Z + Sk - prob.C)
        )
        stationarity = float(np.linalg.norm(grad_yE))
        return max(sign_violation, compl_violation, stationarity) / scale


def multiplier_identity_gap(blocks, prev_state, new_state, tau: float, sigma: float) -> float:
    """Norm of z^{k+1} - z^k - tau sigma h(x^{k+1}, y^{k+1}), recomputed.

    Zero to the last bit for a faithful multiplier step.
    """
    x1, y1, z1 = new_state
    z0 = prev_state[2]
    h = blocks.constraint(x1, y1)
    gap = z1 - (z0 + (tau * sigma) * h)
    return float(np.linalg.norm(gap)) / (1.0 + float(np.linalg.norm(z1)))


# ---------------------------------------------------------------------------
# alg2: inequality rows in the dual directly
# ---------------------------------------------------------------------------


class Alg2Blocks(_DnnsdpBlocks):
    """Four-block regrouping with x block (y_I, Z) and y block (y_E, S).

    Flat layout: x = [y_I, vec(Z)], y = [y_E, vec(S)], z = vec(X).
    """

    variant = "alg2"

    def __init__(self, prob: DnnsdpProblem, eps: float = 1e-5, drop_proximal: bool = False):
        if prob.mI == 0:
            raise ValueError("alg2 requires inequality rows; use alg1")
        super().__init__(prob, eps, drop_proximal)
        self._nn = prob.n * prob.n
        self.gramI = prob.AI.gram()
        lam_hat = prob.AI.lambda_max_gram(tol=1e-8)
        self.lamI_max = lam_hat
        # strict margin over the spectral estimate keeps rho I - AI AI* PSD
        self.rho = 1.01 * lam_hat if lam_hat > 0 else 1.0
        self.theta = min(self.rho, 1.0 - self.lamI_max / self.rho)
        self.theory = TheoryEvaluators(
            norm_x_pf_sf=self._norm_x_pf,
            norm_x_pf_half_sf=self._norm_x_pf,
            norm_y_tg=lambda dy, sigma: self.metric_y(dy, sigma),
            norm_y_pg_34sg=lambda dy, sigma: math.sqrt(self.eps)
            * np.linalg.norm(dy[self.prob.mE :]),
            c_upper=lambda sigma: max(1.0 / self.delta(sigma), 2.0 / (sigma * self.theta)),
        )

    def _norm_x_pf(self, dx, sigma: float) -> float:
        dyI = dx[: self.prob.mI]
        q = self.rho * float(dyI @ dyI) - float(
            np.linalg.norm(self.prob.AI.adjoint(dyI))
        ) ** 2
        return math.sqrt(max(sigma * q, 0.0))

    def pack_x(self, yI, Z):
        return np.concatenate([yI, Z.ravel()])

    def unpack_x(self, x):
        n = self.prob.n
        return x[: self.prob.mI], x[self.prob.mI :].reshape(n, n)

    def pack_y(self, yE, S):
        return np.concatenate([yE, S.ravel()])

    def unpack_y(self, y):
        n = self.prob.n
        return y[: self.prob.mE], y[self.prob.mE :].reshape(n, n)

    def iterate_from_state(self, state) -> DualIterate:
        x, y, z = state
        yI, Z = self.unpack_x(x)
        yE, S = self.unpack_y(y)
        return DualIterate(y_I=yI, Z=Z, y_E=yE, S=S, X=z.reshape(self.prob.n, self.prob.n))

    def pack_reference(self, it: DualIterate):
        return (
            self.pack_x(it.y_I, it.Z),
            self.pack_y(it.y_E, it.S),
            it.X.ravel().copy(),
        )

    def solve_x(self, x, y, z, req: SubproblemRequest) -> BlockOutcome:
        prob, sigma = self.prob, req.sigma
        yIk, Zk = self.unpack_x(x)
        yEk, Sk = self.unpack_y(y)
        Xk = z.reshape(prob.n, prob.n)
        lam = sigma * self.theta
        floor = _floor(req, lam, self.floor_hint)

        AEt_yEk = prob.AE.adjoint(yEk)
        W_base = AEt_yEk + Sk - prob.C + Xk / sigma
        proj_base = prob.M / sigma + prob.C - AEt_yEk - Sk - Xk / sigma
        gram_yIk = self.gramI @ yIk

        Z_prev = Zk
        for j in range(1, req.inner_cap + 1):
            grad = gram_yIk + prob.AI.apply(Z_prev + W_base) - prob.bI / sigma
            yI = project_nonneg_vec(yIk - grad / self.rho)
            Z = project_nonneg(proj_base - prob.AI.adjoint(yI))
            xi = sigma * prob.AI.apply(Z - Z_prev)
            norm = float(np.linalg.norm(xi))
            dyI = yI - yIk
            dZ = Z - Zk
            AIt_dyI = prob.AI.adjoint(dyI)
            q = (
                self.rho * float(dyI @ dyI)
                + 2.0 * frob_inner(AIt_dyI, dZ)
                + float(np.linalg.norm(dZ)) ** 2
            )
            metric = math.sqrt(max(sigma * q, 0.0))
            scaled = _scaled(norm, req, lam)
            if accepts_half(scaled, metric, req.bound, floor, req.criterion, req.exact_tol):
                cert = np.concatenate([xi, np.zeros(self._nn)])
                return BlockOutcome(self.pack_x(yI, Z), scaled, metric, j, floor, cert)
            Z_prev = Z
        raise InnerSolveError(
            f"(y_I, Z) block hit the sweep cap {req.inner_cap} at k={req.k} "
            f"(norm {scaled:g}, metric {metric:g})",
            block="x",
            norm=scaled,
            metric=metric,
            sweeps=req.inner_cap,
        )

    def solve_y(self, x_new, y, z, req: SubproblemRequest) -> BlockOutcome:
        prob = self.prob
        yI, Z = self.unpack_x(x_new)
        yEk, Sk = self.unpack_y(y)
        Xk = z.reshape(prob.n, prob.n)
        fixed = prob.AI.adjoint(yI) + Z - prob.C
        yE, S, eta_vec, norm, metric, sweeps, floor = _sweep_yE_S(
            self, fixed, yEk, Sk, Xk, req
        )
        cert = np.concatenate([eta_vec, np.zeros(self._nn)])
        return BlockOutcome(self.pack_y(yE, S), norm, metric, sweeps, floor, cert)

    def constraint(self, x, y) -> np.ndarray:
        prob = self.prob
        yI, Z = self.unpack_x(x)
        yE, S = self.unpack_y(y)
        return (prob.AI.adjoint(yI) + Z + prob.AE.adjoint(yE) + S - prob.C).ravel()

    def objective(self, x, y) -> float:
        yI, Z = self.unpack_x(x)
        yE, _ = self.unpack_y(y)
        return (
            -float(self.prob.bI @ yI)
            - frob_inner(self.prob.M, Z)
            - float(self.prob.bE @ yE)
        )

    def metric_x(self, dx, sigma: float) -> float:
        dyI, dZ = self.unpack_x(dx)
        q = (
            self.rho * float(dyI @ dyI)
            + 2.0 * frob_inner(self.prob.AI.adjoint(dyI), dZ)
            + float(np.linalg.norm(dZ)) ** 2
        )
        return math.sqrt(max(sigma * q, 0.0))

    def metric_y(self, dy, sigma: float) -> float:
        dyE, dS = self.unpack_y(dy)
        return math.sqrt(
            max(
                sigma * float(np.linalg.norm(self.prob.AE.adjoint(dyE) + dS)) ** 2
                + self.eps * float(np.linalg.norm(dS)) ** 2,
                0.0,
            )
        )

    def block_objective_x(self, x_cand, x_anchor, y, z, sigma: float) -> float:
        prob = self.prob
        yI, Z = self.unpack_x(x_cand)
        yIk, _ = self.unpack_x(x_anchor)
        yE, S = self.unpack_y(y)
        X = z.reshape(prob.n, prob.n)
        r = prob.AI.adjoint(yI) + Z + prob.AE.adjoint(yE) + S - prob.C
        dyI = yI - yIk
        prox = sigma * (
            self.rho * float(dyI @ dyI)
            - float(np.linalg.norm(prob.AI.adjoint(dyI))) ** 2
        )
        return (
            -float(prob.bI @ yI)
            - frob_inner(prob.M, Z)
            + frob_inner(X, r)
            + 0.5 * sigma * float(np.linalg.norm(r)) ** 2
            + 0.5 * max(prox, 0.0)
        )

    def block_objective_y(self, y_cand, y_anchor, x_new, z, sigma: float) -> float:
        prob = self.prob
        yI, Z = self.unpack_x(x_new)
        yE, S = self.unpack_y(y_cand)
        _, Sk = self.unpack_y(y_anchor)
        X = z.reshape(prob.n, prob.n)
        r = prob.AI.adjoint(yI) + Z + prob.AE.adjoint(yE) + S - prob.C
        return (
            -float(prob.bE @ yE)
            + frob_inner(X, r)
            + 0.5 * sigma * float(np.linalg.norm(r)) ** 2
            + 0.5 * self.eps * float(np.linalg.norm(S - Sk)) ** 2
        )


# ---------------------------------------------------------------------------
# alg3: slack reformulation, conjugate-gradient y_I step
# ---------------------------------------------------------------------------


class Alg3Blocks(_DnnsdpBlocks):
    """Slack-split regrouping with x block (y_I, z, Z), y block (y_E, S).

    Flat layout: x = [y_I, z, vec(Z)], y = [y_E, vec(S)],
    multiplier = [vec(X), x].  Only the absolute criterion (or exact
    mode) is supported; the coupled (y_I, z, Z) block has no cheap
    relative-criterion metric bound.
    """

    variant = "alg3"

    def __init__(
        self,
        prob: DnnsdpProblem,
        eps: float = 1e-5,
        drop_proximal: bool = False,
        cg_cap: int = 10000,
    ):
        if prob.mI == 0:
            raise ValueError("alg3 requires inequality rows; use alg1")
        super().__init__(prob, eps, drop_proximal)
        self._nn = prob.n * prob.n
        self.gramI = prob.AI.gram()
        self.lamI_max = prob.AI.lambda_max_gram(tol=1e-8)
        self.cg_cap = cg_cap
        self.cg_iterations = 0
        self.theory = TheoryEvaluators(
            norm_x_pf_sf=lambda dx, sigma: math.sqrt(sigma * self.eps)
            * np.linalg.norm(dx[: self.prob.mI]),
            norm_x_pf_half_sf=lambda dx, sigma: math.sqrt(sigma * self.eps)
            * np.linalg.norm(dx[: self.prob.mI]),
            norm_y_tg=lambda dy, sigma: self.metric_y(dy, sigma),
            norm_y_pg_34sg=lambda dy, sigma: math.sqrt(self.eps)
            * np.linalg.norm(dy[self.prob.mE :]),
            c_upper=lambda sigma: max(
                1.0 / self.delta(sigma), 2.0 / (sigma * self._tf_lower_bound())
            ),
        )

    def _tf_lower_bound(self) -> float:
        # ||AI* u + W||^2 + ||u - v||^2 + eps ||u||^2 >= c0 (||u||^2 + ||v||^2 + ||W||^2)
        # with c0 = (eps/3) / (max(1, lam_max(AI AI*)) + eps/3).
        third = self.eps / 3.0
        return third / (max(1.0, self.lamI_max) + third)

    def _cg_op(self, v):
        return self.gramI @ v + (1.0 + self.eps) * v

    def pack_x(self, yI, zs, Z):
        return np.concatenate([yI, zs, Z.ravel()])

    def unpack_x(self, x):
        mI, n = self.prob.mI, self.prob.n
        return x[:mI], x[mI : 2 * mI], x[2 * mI :].reshape(n, n)

    def pack_y(self, yE, S):
        return np.concatenate([yE, S.ravel()])

    def unpack_y(self, y):
        n = self.prob.n
        return y[: self.prob.mE], y[self.prob.mE :].reshape(n, n)

    def unpack_z(self, z):
        n = self.prob.n
        return z[: self._nn].reshape(n, n), z[self._nn :]

    def iterate_from_state(self, state) -> DualIterate:
        x, y, z = state
        yI, zs, Z = self.unpack_x(x)
        yE, S = self.unpack_y(y)
        X, xm = self.unpack_z(z)
        return DualIterate(y_I=yI, Z=Z, y_E=yE, S=S, X=X, z_slack=zs, x_slack=xm)

    def pack_reference(self, it: DualIterate):
        if it.z_slack is None or it.x_slack is None:
            raise ValueError("alg3 reference needs the slack fields populated")
        return (
            self.pack_x(it.y_I, it.z_slack, it.Z),
            self.pack_y(it.y_E, it.S),
            np.concatenate([it.X.ravel(), it.x_slack]),
        )

    def solve_x(self, x, y, z, req: SubproblemRequest) -> BlockOutcome:
        if req.criterion in (Criterion.C2, Criterion.C2PRIME):
            raise ValueError("alg3 supports the absolute criterion and exact mode only")
        prob, eps, sigma = self.prob, self.eps, req.sigma
        yIk, zsk, Zk = self.unpack_x(x)
        yEk, Sk = self.unpack_y(y)
        Xk, xmk = self.unpack_z(z)

        AEt_yEk = prob.AE.adjoint(yEk)
        rhs_fixed = -(xmk - prob.bI) / sigma + eps * yIk
        base_mat = prob.C - Sk - AEt_yEk - Xk / sigma
        proj_base = prob.M / sigma + prob.C - AEt_yEk - Sk - Xk / sigma
        if req.criterion is Criterion.C1:
            cg_tol = max(0.1 * req.bound / sigma, 1e-14)
        else:
            cg_tol = max(0.1 * req.exact_tol / sigma, 1e-15)

        yI_prev, zs_prev, Z_prev = yIk, zsk, Zk
        for j in range(1, req.inner_cap + 1):
            rhs = zs_prev + prob.AI.apply(base_mat - Z_prev) + rhs_fixed
            yI, _res, cg_it = cg_solve(
                self._cg_op, rhs, tol=cg_tol, max_iter=self.cg_cap, x0=yI_prev
            )
            self.cg_iterations += cg_it
            R = self._cg_op(yI) - rhs
            zs = project_nonneg_vec(yI + xmk / sigma)
            Z = project_nonneg(proj_base - prob.AI.adjoint(yI))
            xi = sigma * (prob.AI.apply(Z - Z_prev) - (zs - zs_prev) + R)
            norm = float(np.linalg.norm(xi))
            metric = self.metric_x(self.pack_x(yI - yIk, zs - zsk, Z - Zk), sigma)
            if accepts_half(norm, metric, req.bound, 0.0, req.criterion, req.exact_tol):
                cert = np.concatenate([xi, np.zeros(prob.mI + self._nn)])
                return BlockOutcome(self.pack_x(yI, zs, Z), norm, metric, j, 0.0, cert)
            yI_prev, zs_prev, Z_prev = yI, zs, Z
        raise InnerSolveError(
            f"(y_I, z, Z) block hit the sweep cap {req.inner_cap} at k={req.k} "
            f"(norm {norm:g}, metric {metric:g})",
            block="x",
            norm=norm,
            metric=metric,
            sweeps=req.inner_cap,
        )

    def solve_y(self, x_new, y, z, req: SubproblemRequest) -> BlockOutcome:
        prob = self.prob
        yI, _zs, Z = self.unpack_x(x_new)
        yEk, Sk = self.unpack_y(y)
        Xk, _ = self.unpack_z(z)
        fixed = prob.AI.adjoint(yI) + Z - prob.C
        yE, S, eta_vec, norm, metric, sweeps, floor = _sweep_yE_S(
            self, fixed, yEk, Sk, Xk, req
        )
        cert = np.concatenate([eta_vec, np.zeros(self._nn)])
        return BlockOutcome(self.pack_y(yE, S), norm, metric, sweeps, floor, cert)

    def constraint(self, x, y) -> np.ndarray:
        prob = self.prob
        yI, zs, Z = self.unpack_x(x)
        yE, S = self.unpack_y(y)
        top = (prob.AI.adjoint(yI) + Z + prob.AE.adjoint(yE) + S - prob.C).ravel()
        return np.concatenate([top, yI - zs])

    def objective(self, x, y) -> float:
        yI, _zs, Z = self.unpack_x(x)
        yE, _ = self.unpack_y(y)
        return (
            -float(self.prob.bI @ yI)
            - frob_inner(self.prob.M, Z)
            - float(self.prob.bE @ yE)
        )

    def metric_x(self, dx, sigma: float) -> float:
        dyI, dzs, dZ = self.unpack_x(dx)
        q = (
            float(np.linalg.norm(self.prob.AI.adjoint(dyI) + dZ)) ** 2
            + float(np.linalg.norm(dyI - dzs)) ** 2
            + self.eps * float(dyI @ dyI)
        )
        return math.sqrt(max(sigma * q, 0.0))

    def metric_y(self, dy, sigma: float) -> float:
        dyE, dS = self.unpack_y(dy)
        return math.sqrt(
            max(
                sigma * float(np.linalg.norm(self.prob.AE.adjoint(dyE) + dS)) ** 2
                + self.eps * float(np.linalg.norm(dS)) ** 2,
                0.0,
            )
        )

    def block_objective_x(self, x_cand, x_anchor, y, z, sigma: float) -> float:
        prob = self.prob
        yI, zs, Z = self.unpack_x(x_cand)
        yIk, _, _ = self.unpack_x(x_anchor)
        yE, S = self.unpack_y(y)
        X, xm = self.unpack_z(z)
        r = prob.AI.adjoint(yI) + Z + prob.AE.adjoint(yE) + S - prob.C
        g = yI - zs
        return (
            -float(prob.bI @ yI)
            - frob_inner(prob.M, Z)
            + frob_inner(X, r)
            + float(xm @ g)
            + 0.5 * sigma * float(np.linalg.norm(r)) ** 2
            + 0.5 * sigma * float(g @ g)
            + 0.5 * sigma * self.eps * float(np.linalg.norm(yI - yIk)) ** 2
        )


def multiplier_update(
    prob: DnnsdpProblem, it: DualIterate, sigma: float, tau: float
) -> tuple[np.ndarray, np.ndarray | None]:
    """Multiplier ascent step recomputed from the iterate (test oracle).

    Returns (X_next, x_next); x_next is None unless the iterate carries
    slack variables.
    """
    r = prob.AE.adjoint(it.y_E) + it.Z + it.S - prob.C
    if prob.mI > 0:
        r = r + prob.AI.adjoint(it.y_I)
    X_next = it.X + (tau * sigma) * r
    if it.z_slack is None:
        return X_next, None
    x_next = it.x_slack + (tau * sigma) * (it.y_I - it.z_slack)
    return X_next, x_next


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class DnnsdpResult:
    iterate: DualIterate
    report: ResidualReport
    status: SolveStatus
    iterations: int
    trace: list
    residuals: list
    primal_objective: float
    dual_objective: float
    sigma_final: float
    restarts: int
    theory: object | None = None
    failure: InnerSolveError | None = None


def make_blocks(
    prob: DnnsdpProblem, variant: str, eps: float = 1e-5, drop_proximal: bool = False
) -> _DnnsdpBlocks:
    if variant == "alg1":
        return Alg1Blocks(prob, eps, drop_proximal)
    if variant == "alg2":
        return Alg2Blocks(prob, eps, drop_proximal)
    if variant == "alg3":
        return Alg3Blocks(prob, eps, drop_proximal)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def initial_state(blocks: _DnnsdpBlocks):
    prob = blocks.prob
    nn = prob.n * prob.n
    if blocks.variant == "alg1":
        return (np.zeros(nn + prob.mE), np.zeros(nn), np.zeros(nn))
    if blocks.variant == "alg2":
        return (np.zeros(prob.mI + nn), np.zeros(prob.mE + nn), np.zeros(nn))
    return (
        np.zeros(2 * prob.mI + nn),
        np.zeros(prob.mE + nn),
        np.zeros(nn + prob.mI),
    )


def solve_dnnsdp(
    prob: DnnsdpProblem,
    variant: str,
    cfg: EngineConfig,
    policy: AdaptationPolicy | None = None,
    eps: float = 1e-5,
    reference: DualIterate | None = None,
    drop_proximal: bool = False,
    multiplier_step_scale: float = 1.0,
) -> DnnsdpResult:
    """Run one solver variant until eta < cfg.eta_tol or cfg.k_max.

    ``policy`` enables penalty adaptation with restarts (incompatible
    with theory recording, which assumes a constant sigma within a run
    is not required but a planted ``reference`` is).  ``reference``
    turns on the per-iteration theory trace consumed by
    :mod:`ipadmm.verify`.
    """
    from . import verify  # local import; verify depends on this module's types

    ensure_valid(cfg)
    if variant == "alg1" and prob.mI != 0:
        raise ValidationError(
            [ConfigViolation("variant-mismatch", "alg1 requires a problem with mI = 0")]
        )
    if variant in ("alg2", "alg3") and prob.mI == 0:
        raise ValidationError(
            [ConfigViolation("variant-mismatch", f"{variant} requires inequality rows")]
        )
    if variant == "alg3" and cfg.criterion in (Criterion.C2, Criterion.C2PRIME):
        raise ValidationError(
            [
                ConfigViolation(
                    "criterion-unsupported",
                    "alg3 has no relative-criterion metric bound; use c1 or exact",
                )
            ]
        )

    blocks = make_blocks(prob, variant, eps, drop_proximal)
    state0 = initial_state(blocks)

    residuals: list[ResidualReport] = []
    etas: list[float] = []
    restarts = 0
    last_restart = -(10**9)
    current = {"sigma": cfg.sigma, "report": None}

    report0 = kkt_residuals(prob, blocks.iterate_from_state(state0))
    blocks.set_floor_hint(report0)

    def stop(state, record):
        rep = kkt_residuals(prob, blocks.iterate_from_state(state))
        residuals.append(rep)
        etas.append(rep.eta)
        blocks.set_floor_hint(rep)
        current["report"] = rep
        return rep.eta < cfg.eta_tol

    def sigma_rule(k, record):
        nonlocal restarts, last_restart
        if policy is None:
            return None
        sigma = current["sigma"]
        new_sigma = sigma
        if len(residuals) >= policy.window and (k + 1) % policy.window == 0:
            new_sigma = adapt_sigma(residuals[-policy.window :], sigma, policy)
        if (
            len(etas) >= policy.restart_window
            and k - last_restart >= policy.restart_window
            and restart_check(etas, policy)
        ):
            aggressive = AdaptationPolicy(
                window=policy.window,
                imbalance_threshold=1.0 + 1e-12,
                scale_factor=policy.scale_factor**2,
                sigma_min=policy.sigma_min,
                sigma_max=policy.sigma_max,
                restart_window=policy.restart_window,
                restart_stall_fraction=policy.restart_stall_fraction,
            )
            new_sigma = adapt_sigma(residuals[-policy.window :], new_sigma, aggressive)
            restarts += 1
            last_restart = k
        current["sigma"] = new_sigma
        return new_sigma if new_sigma != sigma else None

    recorder = None
    if reference is not None:
        recorder = verify.TheoryRecorder(blocks, reference, cfg)

    from . import engine as _engine

    result = _engine.solve(
        blocks,
        cfg,
        state0,
        stop=stop,
        sigma_rule=sigma_rule,
        recorder=recorder,
        multiplier_step_scale=multiplier_step_scale,
    )

    final_state = (result.x, result.y, result.z)
    final_it = blocks.iterate_from_state(final_state)
    final_report = current["report"] or kkt_residuals(prob, final_it)
    primal = frob_inner(prob.C, final_it.X)
    dual = (
        float(prob.bE @ final_it.y_E)
        + float(prob.bI @ final_it.y_I)
        + frob_inner(prob.M, final_it.Z)
    )
    return DnnsdpResult(
        iterate=final_it,
        report=final_report,
        status=result.status,
        iterations=result.iterations,
        trace=result.trace,
        residuals=residuals,
        primal_objective=primal,
        dual_objective=dual,
        sigma_final=current["sigma"],
        restarts=restarts,
        theory=recorder.trace if recorder is not None else None,
        failure=result.failure,
    )
