"""Executable checks of the solver's per-iteration inequalities.

A planted instance supplies the exact primal-dual point (x*, y*, z*);
the recorder captures, at every outer iteration, the handful of metric
norms and certificate inner products that the two descent inequalities
are built from.  The checks then evaluate both sides numerically:

  * the single-step energy inequality relating consecutive iterate
    errors, constraint residuals, and the certificate cross terms
    (:func:`lemma1_margins`), and
  * the weighted-energy contraction for the absolute criterion
    (:func:`descent_slacks`), whose additive slack involves the scaled
    certificate budget and the residual quantity R_k.

Both hold with nonnegative margin for a correct implementation; the
fault-injection harness corrupts the solver in controlled ways and
verifies the margins go negative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dnnsdp import multiplier_identity_gap, solve_dnnsdp
from .engine import Criterion, EngineConfig, gamma_for_c1
from .problems import gen_planted

LEMMA1_TOL = 1e-8
DESCENT_TOL = 1e-6
IDENTITY_TOL = 1e-12
MEMBERSHIP_TOL = 1e-9

FAULT_MODES = ("multiplier-scale", "tau-sign", "drop-proximal")


@dataclass
class TheoryRow:
    """Per-iterate quantities; index j counts produced iterates from 1."""

    j: int
    sigma: float
    h_norm: float
    cross: float  # <h^{j-1}, B* dy^j>
    exf: float  # ||x^j - x*||_{Pf + Sf}
    eyg: float  # ||y^j - y*||_{Tg}
    ez: float  # ||z^j - z*||
    dx_pf_half: float  # ||x^j - x^{j-1}||_{Pf + Sf/2}
    dy_pg34: float  # ||y^j - y^{j-1}||_{Pg + (3/4) Sg}
    dy_tg: float  # ||y^j - y^{j-1}||_{Tg}
    dz: float  # ||z^j - z^{j-1}||
    r_term: float  # 2<x_e, xi> + 2<y_e, eta> + 2<eta^j - eta^{j-1}, dy^j>


@dataclass
class TheoryTrace:
    rows: list
    cfg: EngineConfig
    c_upper: float = 0.0

    def __len__(self):
        return len(self.rows)


class TheoryRecorder:
    """Engine observer that builds a :class:`TheoryTrace` against a reference."""

    def __init__(self, problem, reference, cfg: EngineConfig):
        if problem.theory is None:
            raise ValueError("problem does not expose theory norm evaluators")
        self.problem = problem
        self.xr, self.yr, self.zr = problem.pack_reference(reference)
        self.trace = TheoryTrace(rows=[], cfg=cfg)
        self._eta_prev: np.ndarray | None = None

    def record(self, k, prev_state, oo, h_prev, h_mid, sigma, cfg):
        th = self.problem.theory
        x1, y1, z1 = oo.state
        x0, y0, _z0 = prev_state
        dx = x1 - x0
        dy = y1 - y0
        dz = z1 - prev_state[2]
        x_e = x1 - self.xr
        y_e = y1 - self.yr
        z_e = z1 - self.zr

        xi = oo.out_x.cert_vec
        eta = oo.out_y.cert_vec
        xi = np.zeros_like(x1) if xi is None else xi
        eta = np.zeros_like(y1) if eta is None else eta
        eta_prev = self._eta_prev if self._eta_prev is not None else np.zeros_like(eta)
        r_term = 2.0 * float(x_e @ xi) + 2.0 * float(y_e @ eta) + 2.0 * float(
            (eta - eta_prev) @ dy
        )
        self._eta_prev = eta

        cross = 0.0
        if h_prev is not None:
            cross = float(h_prev @ (oo.h_vec - h_mid))

        self.trace.rows.append(
            TheoryRow(
                j=k + 1,
                sigma=sigma,
                h_norm=oo.h_norm,
                cross=cross,
                exf=float(th.norm_x_pf_sf(x_e, sigma)),
                eyg=float(th.norm_y_tg(y_e, sigma)),
                ez=float(np.linalg.norm(z_e)),
                dx_pf_half=float(th.norm_x_pf_half_sf(dx, sigma)),
                dy_pg34=float(th.norm_y_pg_34sg(dy, sigma)),
                dy_tg=float(th.norm_y_tg(dy, sigma)),
                dz=float(np.linalg.norm(dz)),
                r_term=r_term,
            )
        )
        self.trace.c_upper = max(self.trace.c_upper, float(th.c_upper(sigma)))


def _require_constant_sigma(trace: TheoryTrace) -> float:
    sigmas = {row.sigma for row in trace.rows}
    if len(sigmas) != 1:
        raise ValueError("theory checks require a run with constant sigma")
    return sigmas.pop()


@dataclass
class MarginReport:
    ks: list
    margins: list
    scales: list

    def min_normalized(self) -> float:
        if not self.margins:
            return 0.0
        return min(m / s for m, s in zip(self.margins, self.scales))

    def ok(self, tol: float) -> bool:
        return all(m >= -tol * s for m, s in zip(self.margins, self.scales))


def lemma1_margin(trace: TheoryTrace, k: int) -> tuple[float, float]:
    """Right-minus-left margin of the single-step energy inequality at k >= 1."""
    if k < 1 or k + 1 > len(trace.rows):
        raise ValueError(f"margin needs rows k and k+1 with k >= 1, got k={k}")
    sigma = _require_constant_sigma(trace)
    tau = trace.cfg.tau
    row_k = trace.rows[k - 1]
    row_n = trace.rows[k]

    lhs_terms = [
        (2.0 - tau) * sigma * row_n.h_norm**2,
        (row_n.ez**2 - row_k.ez**2) / (tau * sigma),
        row_n.eyg**2 - row_k.eyg**2,
        row_n.exf**2 - row_k.exf**2,
        row_n.dy_pg34**2 - row_k.dy_pg34**2,
    ]
    rhs_terms = [
        2.0 * (1.0 - tau) * sigma * row_n.cross,
        row_n.r_term,
        -row_n.dx_pf_half**2,
        -row_n.dy_tg**2,
    ]
    margin = sum(rhs_terms) - sum(lhs_terms)
    scale = 1.0 + max(abs(t) for t in lhs_terms + rhs_terms)
    return margin, scale


def lemma1_margins(trace: TheoryTrace, k_max: int | None = None) -> MarginReport:
    last = len(trace.rows) - 1
    if k_max is not None:
        last = min(last, k_max)
    ks, margins, scales = [], [], []
    for k in range(1, last + 1):
        m, s = lemma1_margin(trace, k)
        ks.append(k)
        margins.append(m)
        scales.append(s)
    return MarginReport(ks, margins, scales)


def _energy(row: TheoryRow, mu: float, nu: float, gamma: float, tau: float, sigma: float) -> float:
    return (
        (1.0 - mu / gamma) * row.exf**2
        + (1.0 - (2.0 * mu + nu) / gamma) * row.eyg**2
        + row.ez**2 / (tau * sigma)
        + row.dy_pg34**2
        + (2.0 - tau - 2.0 * mu / gamma) * row.dz**2 / (tau**2 * sigma)
    )


@dataclass
class DescentReport(MarginReport):
    r_values: list


def descent_slacks(trace: TheoryTrace, k_max: int | None = None) -> DescentReport:
    """Slack of the weighted-energy contraction under the absolute criterion."""
    cfg = trace.cfg
    if cfg.criterion not in (Criterion.C1, Criterion.EXACT):
        raise ValueError("the descent check applies to absolute-criterion runs")
    sigma = _require_constant_sigma(trace)
    tau = cfg.tau
    gamma = gamma_for_c1(cfg)
    c = trace.c_upper

    def mu(k):
        return 0.0 if cfg.criterion is Criterion.EXACT else cfg.mu(k)

    def nu(k):
        return 0.0 if cfg.criterion is Criterion.EXACT else cfg.nu(k)

    base = min(tau, 1.0 + tau - tau**2)
    m = min(2.0 / 3.0 * base, base)

    last = len(trace.rows) - 1
    if k_max is not None:
        last = min(last, k_max)
    ks, slacks, scales, r_values = [], [], [], []
    for k in range(1, last + 1):
        row_k = trace.rows[k - 1]
        row_n = trace.rows[k]
        e_k = _energy(row_k, mu(k), nu(k), gamma, tau, sigma)
        e_n = _energy(row_n, mu(k + 1), nu(k + 1), gamma, tau, sigma)
        theta = (1.0 + 4.0 * nu(k) / (gamma * (2.0 - tau))) * (
            1.0 + 2.0 * (nu(k) + nu(k + 1)) / gamma
        )
        budget = c * gamma * (nu(k) + nu(k + 1) + mu(k + 1))
        r_k = (3.0 * sigma / (2.0 * tau)) * row_k.h_norm**2 + row_n.dy_tg**2
        slack = theta * e_k + budget - m * r_k - e_n
        ks.append(k)
        slacks.append(slack)
        scales.append(1.0 + max(e_k, e_n, abs(m) * r_k, budget))
        r_values.append(r_k)
    return DescentReport(ks, slacks, scales, r_values)


@dataclass
class SummabilityReport:
    partial_sum: float
    bound: float
    power: int
    ok: bool


def check_summability(cfg: EngineConfig, K: int) -> SummabilityReport:
    """Partial sums of the error schedule against the closed-form tail bound."""
    power = 2 if cfg.criterion is Criterion.C2PRIME else 1
    if cfg.criterion is Criterion.EXACT:
        return SummabilityReport(0.0, 0.0, power, True)
    ks = np.arange(1, K + 1, dtype=float)
    mu = np.minimum(cfg.mu.amplitude, ks ** (-cfg.mu.exponent)) if cfg.mu.amplitude else np.zeros_like(ks)
    nu = np.minimum(cfg.nu.amplitude, ks ** (-cfg.nu.exponent)) if cfg.nu.amplitude else np.zeros_like(ks)
    terms = np.maximum(mu, nu) ** power
    total = float(np.sum(terms))
    bound = max(cfg.mu.partial_sum_bound(power), cfg.nu.partial_sum_bound(power))
    return SummabilityReport(total, bound, power, total <= bound)


def write_margins_csv(path, trace: TheoryTrace) -> None:
    """Per-iteration margin CSV: k, lemma1_margin, descent_slack, R_k."""
    lemma = lemma1_margins(trace)
    try:
        descent = descent_slacks(trace)
        slacks = dict(zip(descent.ks, zip(descent.margins, descent.r_values)))
    except ValueError:
        slacks = {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "lemma1_margin", "descent_slack", "R_k"])
        for k, margin in zip(lemma.ks, lemma.margins):
            slack, r_k = slacks.get(k, ("", ""))
            writer.writerow([k, repr(margin), repr(slack) if slack != "" else "", repr(r_k) if r_k != "" else ""])


# ---------------------------------------------------------------------------
# fault injection
# ---------------------------------------------------------------------------


class AuditRecorder(TheoryRecorder):
    """Theory recorder that also audits each iteration's exact invariants.

    Layer 1: the multiplier identity z^{k+1} = z^k + tau sigma h,
    recomputed from the states (bit-exact for a faithful step).
    Layer 2: membership of the accepted x-certificate in the block
    subdifferential, recomputed from the states (normal-cone test).
    """

    def __init__(self, problem, reference, cfg):
        super().__init__(problem, reference, cfg)
        self.identity_gaps: list[float] = []
        self.membership_gaps: list[float] = []

    def record(self, k, prev_state, oo, h_prev, h_mid, sigma, cfg):
        super().record(k, prev_state, oo, h_prev, h_mid, sigma, cfg)
        self.identity_gaps.append(
            multiplier_identity_gap(self.problem, prev_state, oo.state, cfg.tau, sigma)
        )
        if hasattr(self.problem, "subgradient_audit"):
            self.membership_gaps.append(
                self.problem.subgradient_audit(
                    prev_state, oo.state, oo.out_x.cert_vec, sigma
                )
            )

    def worst_identity(self) -> float:
        return max(self.identity_gaps, default=0.0)

    def worst_membership(self) -> float:
        return max(self.membership_gaps, default=0.0)


@dataclass
class FaultReport:
    detected: bool
    lemma_min: float
    identity_gap: float
    membership_gap: float
    layers: tuple


def audit_trace(recorder: AuditRecorder, inner_failed: bool = False) -> FaultReport:
    """Combine the margin checks with the exact-invariant audits.

    An inner-solve failure counts as a detection: the run could not
    produce criterion-admissible certificates at all.
    """
    layers = []
    if inner_failed:
        layers.append("inner-failure")
    lemma = lemma1_margins(recorder.trace)
    if not lemma.ok(LEMMA1_TOL):
        layers.append("lemma1")
    try:
        if not descent_slacks(recorder.trace).ok(DESCENT_TOL):
            layers.append("descent")
    except ValueError:
        pass
    if recorder.worst_identity() > IDENTITY_TOL:
        layers.append("multiplier-identity")
    if recorder.worst_membership() > MEMBERSHIP_TOL:
        layers.append("certificate-membership")
    return FaultReport(
        detected=bool(layers),
        lemma_min=lemma.min_normalized(),
        identity_gap=recorder.worst_identity(),
        membership_gap=recorder.worst_membership(),
        layers=tuple(layers),
    )


def fault_injection_trial(
    mode: str | None,
    seed: int,
    n: int = 8,
    mE: int = 10,
    iterations: int = 50,
) -> FaultReport:
    """Run one corrupted planted solve and audit its trace.

    Mode ``multiplier-scale`` inflates the multiplier step by 1%,
    ``tau-sign`` flips its sign, and ``drop-proximal`` makes the block
    updates ignore the proximal term their certificates assume; None
    runs the clean control.
    """
    if mode is not None and mode not in FAULT_MODES:
        raise ValueError(f"unknown fault mode {mode!r}; expected one of {FAULT_MODES}")
    inst = gen_planted(seed, n, mE, 0)
    cfg = EngineConfig(
        sigma=1.0,
        tau=1.618,
        criterion=Criterion.C1,
        eta_tol=1e-30,
        k_max=iterations,
    )
    scale = 1.0
    drop = False
    if mode == "multiplier-scale":
        scale = 1.01
    elif mode == "tau-sign":
        scale = -1.0
    elif mode == "drop-proximal":
        drop = True
    from . import engine as _engine
    from .dnnsdp import initial_state, make_blocks

    blocks = make_blocks(inst.problem, "alg1", eps=1e-2, drop_proximal=drop)
    recorder = AuditRecorder(blocks, inst.solution, cfg)
    result = _engine.solve(
        blocks,
        cfg,
        initial_state(blocks),
        recorder=recorder,
        multiplier_step_scale=scale,
    )
    return audit_trace(recorder, inner_failed=result.status is _engine.SolveStatus.INNER_FAILURE)


def run_fault_injection(trials: int = 20, base_seed: int = 0, modes=FAULT_MODES) -> dict:
    """Detection rate per corruption mode over seeded trials."""
    rates = {}
    for mode in modes:
        detected = 0
        for t in range(trials):
            detected += int(fault_injection_trial(mode, base_seed + t).detected)
        rates[mode] = detected / trials
    return rates
