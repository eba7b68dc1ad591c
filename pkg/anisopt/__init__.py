"""anisopt - optimal control in the coefficients of an anisotropic p-Laplacian.

This package solves a regularized anisotropic p-Laplace state equation coupled
with a Hammerstein integral equation, minimizes a tracking cost over
matrix-valued controls, and checks the estimates that justify passing to the
limit in the regularization.
"""

__version__ = "1.0.0"

from .config import APP_NAME
from .control_set import (
    ControlBounds,
    ControlField,
    discrete_tv,
    parameterize,
    project_to_admissible,
)
from .exceptions import AnisoptError, ConfigurationError, OptimizationError, SolverError
from .hammerstein import Kernel, kernel_for_mesh, solve_hammerstein
from .mesh import Mesh, build_mesh
from .ocp import OcpInstance, evaluate_cost, minimize
from .plap import ProblemParams, RegParams, StateField, solve_state
from .result_store import ResultStore
from .run_config import RunConfig, parse_config
from .runner import RunManifest, run

__all__ = [
    "APP_NAME",
    "AnisoptError",
    "ConfigurationError",
    "ControlBounds",
    "ControlField",
    "Kernel",
    "Mesh",
    "OcpInstance",
    "OptimizationError",
    "ProblemParams",
    "RegParams",
    "ResultStore",
    "RunConfig",
    "RunManifest",
    "SolverError",
    "StateField",
    "build_mesh",
    "discrete_tv",
    "evaluate_cost",
    "kernel_for_mesh",
    "minimize",
    "parameterize",
    "parse_config",
    "project_to_admissible",
    "run",
    "solve_hammerstein",
    "solve_state",
    "__version__",
]
