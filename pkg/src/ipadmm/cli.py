"""Command-line interface: solve, generate, compare, verify.

Exit codes: 0 success/converged, 1 invalid configuration, 2 unreadable
or malformed problem file, 3 solver failure (iteration limit or inner
failure).  All randomness flows through the single --seed flag of each
command.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dnnsdp import AdaptationPolicy, kkt_residuals, solve_dnnsdp
from .engine import Criterion, EngineConfig, ErrorSchedule, SolveStatus, ValidationError
from .problems import (
    ProblemFormatError,
    biq_to_dnnsdp,
    gen_planted,
    read_problem,
    read_solution,
    write_problem,
    write_solution,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARSE = 2
EXIT_SOLVER = 3

RESIDUAL_COLUMNS = [
    "eta_P",
    "eta_D",
    "eta_S",
    "eta_K",
    "eta_Sstar",
    "eta_Kstar",
    "eta_C1",
    "eta_C2",
    "eta_I",
    "eta_Istar",
]


@dataclass
class RunRecord:
    instance: str
    variant: str
    criterion: str
    tau: float
    iterations: int
    wall_time: float
    final_eta: float
    status: str
    inner_total: int


def _read_config_file(path) -> dict:
    """key = value lines feeding flag defaults; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {line!r} is not 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


_CONFIG_TYPES = {
    "sigma": float,
    "tau": float,
    "criterion": str,
    "mu_a": float,
    "mu_p": float,
    "nu_a": float,
    "nu_p": float,
    "gamma": float,
    "tol": float,
    "kmax": int,
    "inner_cap": int,
    "allow_large_tau": lambda s: s.lower() in ("1", "true", "yes"),
    "strict_c2": lambda s: s.lower() in ("1", "true", "yes"),
    "adapt": lambda s: s.lower() in ("1", "true", "yes"),
    "eps": float,
    "variant": str,
    "window": int,
    "threshold": float,
    "factor": float,
    "sigma_min": float,
    "sigma_max": float,
    "restart_window": int,
    "stall_fraction": float,
}


def _apply_config_defaults(parser: argparse.ArgumentParser, argv) -> list:
    """Peel off --config FILE and install its values as parser defaults."""
    argv = list(argv)
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        path = argv[i + 1]
    except IndexError:
        parser.error("--config needs a file argument")
    del argv[i : i + 2]
    values = _read_config_file(path)
    defaults = {}
    for key, raw in values.items():
        if key not in _CONFIG_TYPES:
            parser.error(f"unknown config key {key!r}")
        defaults[key] = _CONFIG_TYPES[key](raw)
    parser.set_defaults(**defaults)
    return argv


def _add_solver_flags(p: argparse.ArgumentParser, kmax_default: int = 20000):
    p.add_argument("--variant", choices=["alg1", "alg2", "alg3"], default="alg1")
    p.add_argument("--criterion", choices=[c.value for c in Criterion], default="c1")
    p.add_argument("--tau", type=float, default=1.618)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-5, help="proximal weight")
    p.add_argument("--tol", type=float, default=1e-6, help="stopping tolerance on eta")
    p.add_argument("--kmax", type=int, default=kmax_default)
    p.add_argument("--inner-cap", type=int, default=100, dest="inner_cap")
    p.add_argument("--mu-a", type=float, default=None, dest="mu_a")
    p.add_argument("--mu-p", type=float, default=1.001, dest="mu_p")
    p.add_argument("--nu-a", type=float, default=None, dest="nu_a")
    p.add_argument("--nu-p", type=float, default=1.001, dest="nu_p")
    p.add_argument("--gamma", type=float, default=360.0)
    p.add_argument("--allow-large-tau", action="store_true", dest="allow_large_tau")
    p.add_argument("--strict-c2", action="store_true", dest="strict_c2")
    p.add_argument("--adapt", action="store_true", help="enable penalty adaptation")
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--factor", type=float, default=1.4)
    p.add_argument("--sigma-min", type=float, default=1e-4, dest="sigma_min")
    p.add_argument("--sigma-max", type=float, default=1e4, dest="sigma_max")
    p.add_argument("--restart-window", type=int, default=300, dest="restart_window")
    p.add_argument("--stall-fraction", type=float, default=0.01, dest="stall_fraction")


def _default_amplitude(criterion: Criterion, tau: float) -> float:
    # the relative criteria cap the schedule amplitude at (2 - tau)/4
    if criterion is Criterion.C2:
        return min(0.1, (2.0 - tau) / 4.0)
    if criterion is Criterion.C2PRIME:
        return 0.01
    return 0.1


def _config_from_args(args) -> EngineConfig:
    criterion = Criterion(args.criterion)
    mu_a = args.mu_a if args.mu_a is not None else _default_amplitude(criterion, args.tau)
    nu_a = args.nu_a if args.nu_a is not None else _default_amplitude(criterion, args.tau)
    return EngineConfig(
        sigma=args.sigma,
        tau=args.tau,
        criterion=criterion,
        mu=ErrorSchedule(mu_a, args.mu_p),
        nu=ErrorSchedule(nu_a, args.nu_p),
        gamma=args.gamma,
        eta_tol=args.tol,
        k_max=args.kmax,
        inner_cap=args.inner_cap,
        allow_large_tau=args.allow_large_tau,
        relax_c2=not args.strict_c2,
    )


def _policy_from_args(args) -> AdaptationPolicy | None:
    if not args.adapt:
        return None
    return AdaptationPolicy(
        window=args.window,
        imbalance_threshold=args.threshold,
        scale_factor=args.factor,
        sigma_min=args.sigma_min,
        sigma_max=args.sigma_max,
        restart_window=args.restart_window,
        restart_stall_fraction=args.stall_fraction,
    )


def _write_trace_csv(path, result):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["k", "eta"]
            + RESIDUAL_COLUMNS
            + ["sigma", "inner_x", "inner_y", "cert_x_norm", "cert_y_norm", "h_norm", "objective"]
        )
        for record, report in zip(result.trace, result.residuals):
            comps = report.components()
            writer.writerow(
                [record.k, repr(report.eta)]
                + [repr(comps[c]) for c in RESIDUAL_COLUMNS]
                + [
                    repr(record.sigma),
                    record.inner_x,
                    record.inner_y,
                    repr(record.xi_norm),
                    repr(record.eta_norm),
                    repr(record.h_norm),
                    repr(record.objective),
                ]
            )


def _summary_lines(result) -> list:
    rep = result.report
    lines = [
        f"status {result.status.value}",
        f"iterations {result.iterations}",
        f"eta {rep.eta!r}",
        f"primal_objective {result.primal_objective!r}",
        f"dual_objective {result.dual_objective!r}",
        f"sigma_final {result.sigma_final!r}",
        f"restarts {result.restarts}",
    ]
    lines += [f"{name} {val!r}" for name, val in rep.components().items()]
    return lines


def cmd_solve(args) -> int:
    try:
        prob = read_problem(args.path)
    except (OSError, ProblemFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE

    if args.check_planted:
        try:
            ref = read_solution(args.path + ".sol")
        except (OSError, ProblemFormatError) as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_PARSE
        eta = kkt_residuals(prob, ref).eta
        print(f"reference eta {eta!r}")
        return EXIT_OK if eta <= 1e-10 else EXIT_SOLVER

    try:
        cfg = _config_from_args(args)
        result = solve_dnnsdp(
            prob, args.variant, cfg, policy=_policy_from_args(args), eps=args.eps
        )
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    prefix = args.out_prefix or args.path
    with open(prefix + ".summary.txt", "w") as fh:
        fh.write("\n".join(_summary_lines(result)) + "\n")
    _write_trace_csv(prefix + ".trace.csv", result)
    for line in _summary_lines(result):
        print(line)
    if result.failure is not None:
        print(f"inner failure: {result.failure}", file=sys.stderr)
    return EXIT_OK if result.status is SolveStatus.CONVERGED else EXIT_SOLVER


def cmd_generate(args) -> int:
    rng_seed = args.seed
    if args.kind == "planted":
        try:
            inst = gen_planted(rng_seed, args.n, args.me, args.mi)
        except (ValueError, RuntimeError) as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        write_problem(args.out, inst.problem)
        write_solution(args.out + ".sol", inst.solution)
        print(f"wrote {args.out} (n={args.n} mE={args.me} mI={args.mi}) and {args.out}.sol")
        return EXIT_OK
    # biq
    if args.q < 1:
        print("error: --q must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    rng = np.random.default_rng(rng_seed)
    Q = rng.normal(size=(args.q, args.q))
    Q = 0.5 * (Q + Q.T)
    prob = biq_to_dnnsdp(Q, extended=args.extended, seed=rng_seed)
    write_problem(args.out, prob)
    print(f"wrote {args.out} (q={args.q} n={prob.n} mE={prob.mE} mI={prob.mI})")
    return EXIT_OK


def _parse_solver_spec(spec: str) -> tuple[str, Criterion]:
    parts = spec.split(":")
    if len(parts) != 2 or parts[0] not in ("alg1", "alg2", "alg3"):
        raise ValueError(f"bad solver spec {spec!r}; expected e.g. alg1:c1")
    return parts[0], Criterion(parts[1])


def performance_profile(costs: dict, instances: list, solvers: list) -> dict:
    """Profile points per solver: fraction solved within ratio x of the best.

    ``costs[(instance, solver)]`` is the cost (inf for failures).
    Returns {solver: [(ratio, fraction), ...]} with one point per
    instance sorted by ratio.
    """
    best = {}
    for inst in instances:
        best[inst] = min(costs[(inst, s)] for s in solvers)
    points = {}
    n = len(instances)
    for s in solvers:
        ratios = []
        for inst in instances:
            c = costs[(inst, s)]
            if np.isfinite(c) and np.isfinite(best[inst]) and best[inst] > 0:
                ratios.append(c / best[inst])
            else:
                ratios.append(np.inf)
        ratios.sort()
        points[s] = [
            (r, (i + 1) / n) for i, r in enumerate(ratios) if np.isfinite(r)
        ]
    return points


def cmd_compare(args) -> int:
    if len(args.instances) < 1 or len(args.solvers) < 2:
        print("error: need at least 1 instance and 2 solvers", file=sys.stderr)
        return EXIT_CONFIG
    try:
        specs = [_parse_solver_spec(s) for s in args.solvers]
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    problems = []
    for path in args.instances:
        try:
            problems.append(read_problem(path))
        except (OSError, ProblemFormatError) as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_PARSE

    def run_one(task):
        path, prob, variant, criterion = task
        base = _config_from_args(args)
        amp_default = args.mu_a is None
        cfg = EngineConfig(
            sigma=base.sigma,
            tau=base.tau,
            criterion=criterion,
            mu=ErrorSchedule(
                _default_amplitude(criterion, base.tau) if amp_default else base.mu.amplitude,
                base.mu.exponent,
            ),
            nu=ErrorSchedule(
                _default_amplitude(criterion, base.tau) if amp_default else base.nu.amplitude,
                base.nu.exponent,
            ),
            gamma=base.gamma,
            eta_tol=base.eta_tol,
            k_max=base.k_max,
            inner_cap=base.inner_cap,
            allow_large_tau=base.allow_large_tau,
            relax_c2=base.relax_c2,
        )
        t0 = time.perf_counter()
        try:
            result = solve_dnnsdp(
                prob, variant, cfg, policy=_policy_from_args(args), eps=args.eps
            )
            wall = time.perf_counter() - t0
            inner = sum(r.inner_x + r.inner_y for r in result.trace)
            return RunRecord(
                instance=path,
                variant=variant,
                criterion=criterion.value,
                tau=base.tau,
                iterations=result.iterations,
                wall_time=wall,
                final_eta=result.report.eta,
                status=result.status.value,
                inner_total=inner,
            )
        except ValidationError as err:
            return RunRecord(
                instance=path,
                variant=variant,
                criterion=criterion.value,
                tau=base.tau,
                iterations=0,
                wall_time=time.perf_counter() - t0,
                final_eta=float("inf"),
                status=f"error: {err}",
                inner_total=0,
            )

    tasks = [
        (path, prob, variant, criterion)
        for path, prob in zip(args.instances, problems)
        for variant, criterion in specs
    ]
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        records = list(pool.map(run_one, tasks))
    # deterministic order: by instance, then solver
    records.sort(key=lambda r: (args.instances.index(r.instance), args.solvers.index(f"{r.variant}:{r.criterion}")))

    if args.records:
        with open(args.records, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "instance",
                    "variant",
                    "criterion",
                    "tau",
                    "iterations",
                    "wall_time",
                    "final_eta",
                    "status",
                    "inner_total",
                ]
            )
            for r in records:
                writer.writerow(
                    [
                        r.instance,
                        r.variant,
                        r.criterion,
                        repr(r.tau),
                        r.iterations,
                        repr(r.wall_time),
                        repr(r.final_eta),
                        r.status,
                        r.inner_total,
                    ]
                )

    solver_names = [f"{v}:{c.value}" for v, c in specs]
    by_key = {}
    for r in records:
        by_key[(r.instance, f"{r.variant}:{r.criterion}")] = r
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "solver", "ratio", "fraction"])
        for metric, cost in (
            ("iterations", lambda r: float(r.iterations)),
            ("time", lambda r: r.wall_time),
        ):
            costs = {}
            for (inst, sname), r in by_key.items():
                ok = r.status == SolveStatus.CONVERGED.value
                costs[(inst, sname)] = cost(r) if ok else float("inf")
            profile = performance_profile(costs, args.instances, solver_names)
            for sname in solver_names:
                for ratio, fraction in profile[sname]:
                    writer.writerow([metric, sname, repr(float(ratio)), repr(float(fraction))])
    print(f"wrote {args.out}" + (f" and {args.records}" if args.records else ""))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import (
        DESCENT_TOL,
        LEMMA1_TOL,
        descent_slacks,
        lemma1_margins,
        write_margins_csv,
    )
    from .problems import read_solution

    if args.instance:
        try:
            prob = read_problem(args.instance)
            reference = read_solution(args.reference or args.instance + ".sol")
        except (OSError, ProblemFormatError) as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_PARSE
        if prob.mI:
            reference.x_slack = prob.bI - prob.AI.apply(reference.X)
    else:
        inst = gen_planted(args.seed, args.n, args.me, args.mi)
        prob, reference = inst.problem, inst.solution

    try:
        cfg = _config_from_args(args)
        result = solve_dnnsdp(prob, args.variant, cfg, eps=args.eps, reference=reference)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    lemma = lemma1_margins(result.theory)
    print(f"status {result.status.value} iterations {result.iterations}")
    print(f"lemma1 margins: {len(lemma.margins)} checked, min normalized {lemma.min_normalized():.3e}")
    ok = lemma.ok(LEMMA1_TOL)
    try:
        descent = descent_slacks(result.theory)
        print(
            f"descent slacks: {len(descent.margins)} checked, min normalized "
            f"{descent.min_normalized():.3e}"
        )
        ok = ok and descent.ok(DESCENT_TOL)
    except ValueError as err:
        print(f"descent check skipped: {err}")
    if args.out:
        write_margins_csv(args.out, result.theory)
        print(f"wrote {args.out}")
    print("verdict", "pass" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipadmm",
        description="Inexact proximal ADMM solvers for doubly nonnegative SDPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a problem file")
    p_solve.add_argument("path")
    _add_solver_flags(p_solve)
    p_solve.add_argument("--out-prefix", default=None, dest="out_prefix")
    p_solve.add_argument(
        "--check-planted",
        action="store_true",
        dest="check_planted",
        help="only verify the sidecar reference solution",
    )
    p_solve.set_defaults(func=cmd_solve)

    p_gen = sub.add_parser("generate", help="write a problem file")
    gsub = p_gen.add_subparsers(dest="kind", required=True)
    g_pl = gsub.add_parser("planted", help="planted-KKT instance")
    g_pl.add_argument("--n", type=int, required=True)
    g_pl.add_argument("--me", type=int, required=True)
    g_pl.add_argument("--mi", type=int, default=0)
    g_pl.add_argument("--seed", type=int, default=0)
    g_pl.add_argument("--out", required=True)
    g_pl.set_defaults(func=cmd_generate, kind="planted")
    g_bq = gsub.add_parser("biq", help="binary-quadratic relaxation")
    g_bq.add_argument("--q", type=int, required=True)
    g_bq.add_argument("--extended", action="store_true")
    g_bq.add_argument("--seed", type=int, default=0)
    g_bq.add_argument("--out", required=True)
    g_bq.set_defaults(func=cmd_generate, kind="biq")

    p_cmp = sub.add_parser("compare", help="performance profiles over instances")
    p_cmp.add_argument("--instances", nargs="+", required=True)
    p_cmp.add_argument("--solvers", nargs="+", required=True, help="e.g. alg1:c1 alg1:c2")
    _add_solver_flags(p_cmp)
    p_cmp.add_argument("--out", required=True, help="profile CSV path")
    p_cmp.add_argument("--records", default=None, help="per-run records CSV path")
    p_cmp.add_argument("--workers", type=int, default=4)
    p_cmp.set_defaults(func=cmd_compare)

    p_ver = sub.add_parser("verify", help="run theory checks against a reference")
    p_ver.add_argument("--instance", default=None, help="problem file (with .sol sidecar)")
    p_ver.add_argument("--reference", default=None, help="explicit reference file")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--n", type=int, default=10)
    p_ver.add_argument("--me", type=int, default=15)
    p_ver.add_argument("--mi", type=int, default=0)
    _add_solver_flags(p_ver, kmax_default=2000)
    p_ver.add_argument("--out", default=None, help="margins CSV path")
    p_ver.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    argv = _apply_config_defaults(parser, argv)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
