"""Inexact proximal ADMM toolkit for doubly nonnegative SDPs."""

from .dnnsdp import (
    AdaptationPolicy,
    DnnsdpProblem,
    DnnsdpResult,
    DualIterate,
    ResidualReport,
    adapt_sigma,
    kkt_residuals,
    restart_check,
    solve_dnnsdp,
)
from .engine import (
    Criterion,
    EngineConfig,
    ErrorSchedule,
    InexactCertificate,
    SolveStatus,
    ValidationError,
    criterion_check,
    solve,
    validate_config,
)
from .linalg import ConstraintMap, project_nonneg, project_psd, sym_eig
from .problems import (
    PlantedInstance,
    QuadraticToy,
    biq_to_dnnsdp,
    brute_force_biq,
    gen_planted,
    read_problem,
    write_problem,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptationPolicy",
    "ConstraintMap",
    "Criterion",
    "DnnsdpProblem",
    "DnnsdpResult",
    "DualIterate",
    "EngineConfig",
    "ErrorSchedule",
    "InexactCertificate",
    "PlantedInstance",
    "QuadraticToy",
    "ResidualReport",
    "SolveStatus",
    "ValidationError",
    "adapt_sigma",
    "biq_to_dnnsdp",
    "brute_force_biq",
    "criterion_check",
    "gen_planted",
    "kkt_residuals",
    "project_nonneg",
    "project_psd",
    "read_problem",
    "restart_check",
    "solve",
    "solve_dnnsdp",
    "sym_eig",
    "validate_config",
    "write_problem",
]
