"""Identification of the diffusion coefficient in a Robin-boundary elliptic problem.

The coefficient ``a`` in ``-div(a grad u) - b u = f`` with
``grad u . n + gamma u = 0`` is recovered from an H1 observation ``z`` by
minimizing a convex energy misfit plus a Tikhonov penalty over a box.
"""

from .errors import (
    AdmissibilityError,
    CoercivityError,
    ConfigError,
    CrossCheckError,
    DiagnosticError,
    DomainError,
    EigenSolverError,
    InvalidMeshError,
    RobinIdError,
    StagnationError,
    SweepError,
)
from .experiment import (
    ExperimentPlan,
    RateReport,
    fit_loglog,
    make_noise,
    manufacture,
    run_rate_sweep,
    source_condition_1d,
)
from .field import (
    CellField,
    NodalField,
    SobolevConstants,
    boundary_l2,
    estimate_constants,
    h1_norm,
    h1_seminorm,
    l2_norm,
    read_csv,
    write_csv,
)
from .forward import RobinProblem, SolverOptions, assemble, solve, solve_sensitivity, solve_state
from .grid import Mesh, boundary_trace_weights, build_interval_mesh, build_mesh, build_rect_mesh
from .invert import AdmissibleSet, InversionResult, OptimizerConfig, kkt_residual, minimize, project
from .objective import (
    convexity_probe,
    directional_derivative,
    energy_value,
    evaluate,
    gradient,
    tikhonov_total,
)

__version__ = "0.1.0"
