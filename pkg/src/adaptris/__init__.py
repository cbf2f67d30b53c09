"""Adaptive incremental stationary scheme for rate-independent systems."""
from .errors import (
    AdaptrisError,
    ConfigError,
    ContractViolation,
    DescentViolated,
    IndefiniteOperatorError,
    MaxIterationsExceeded,
    ModelEvaluationError,
    SolverError,
    StepFloorReached,
)
from .metric import (
    DiagonalMetric,
    dissipation,
    dist_subdiff,
    norm_V,
    norm_Vinv,
    project_ball_V,
    prox_R_ball,
    soft_threshold,
)
from .model import EnergyModel, exact_solution_1d, make_model_1d, make_model_quadratic
from .fem2d import assemble_stiffness, build_mesh, lumped_mass, make_model_fem, solve_spd
from .stationarity import SolverOptions, StationarityResult, kkt_residuals, solve_stationary
from .scheme import (
    IterateRecord,
    RunOptions,
    Trajectory,
    adaptive_run,
    nested_run,
    residua,
    uniform_run,
)
from .verify import Gates, VerificationReport, check_bv, classify_regimes, exact_trajectory_1d, trajectory_error

__version__ = "0.1.0"

__all__ = [
    "AdaptrisError", "ConfigError", "ContractViolation", "DescentViolated",
    "IndefiniteOperatorError", "MaxIterationsExceeded", "ModelEvaluationError",
    "SolverError", "StepFloorReached",
    "DiagonalMetric", "dissipation", "dist_subdiff", "norm_V", "norm_Vinv",
    "project_ball_V", "prox_R_ball", "soft_threshold",
    "EnergyModel", "exact_solution_1d", "make_model_1d", "make_model_quadratic",
    "assemble_stiffness", "build_mesh", "lumped_mass", "make_model_fem", "solve_spd",
    "SolverOptions", "StationarityResult", "kkt_residuals", "solve_stationary",
    "IterateRecord", "RunOptions", "Trajectory", "adaptive_run", "nested_run",
    "residua", "uniform_run",
    "Gates", "VerificationReport", "check_bv", "classify_regimes",
    "exact_trajectory_1d", "trajectory_error",
]
