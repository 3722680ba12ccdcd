"""Numerical solvers for the slightly subcritical Choquard problem on bounded domains."""

__version__ = "0.1.0"

from .errors import (ChoquardError, ConfigError, ParameterError, ProjectionError, QuadratureError,  # noqa: E402
                     SolverError)
from .grid import DomainSpec, Field, Grid, build_grid  # noqa: E402
from .riesz import RieszKernel, build_kernel  # noqa: E402
from .energy import ChoquardParams, energy, nehari_project  # noqa: E402
from .bubbles import critical_constants  # noqa: E402
from .solver import SolverConfig, SolutionRecord, eps_sweep, multistart, nehari_descent, path_minmax  # noqa: E402

__all__ = [
    "ChoquardError", "ConfigError", "ParameterError", "ProjectionError", "QuadratureError", "SolverError",
    "DomainSpec", "Field", "Grid", "build_grid", "RieszKernel", "build_kernel", "ChoquardParams", "energy",
    "nehari_project", "critical_constants", "SolverConfig", "SolutionRecord", "eps_sweep", "multistart",
    "nehari_descent", "path_minmax",
]
