"""Numerical core: expressions, dynamics, integration, oracles and diagnostics."""

from .api import (
    FrequencyError,
    SimulationResult,
    run_checks,
    run_exact,
    run_reference_example,
    run_simulation,
)
from .expr import DomainError, ExprSyntaxError, MapPair, parse
from .integrator import IntegrationAborted, Trajectory
from .minimizer import OracleError

__all__ = [
    "FrequencyError",
    "SimulationResult",
    "run_checks",
    "run_exact",
    "run_reference_example",
    "run_simulation",
    "DomainError",
    "ExprSyntaxError",
    "MapPair",
    "parse",
    "IntegrationAborted",
    "Trajectory",
    "OracleError",
]
