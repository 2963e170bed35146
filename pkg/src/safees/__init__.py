from __future__ import annotations

__version__ = "0.1.0"

from .core.api import (
    apply_overrides, load_config, run_checks, run_exact, run_reference_example, run_simulation
)
from .core.expr import MapPair, parse

__all__ = [
    "apply_overrides",
    "load_config",
    "run_checks",
    "run_exact",
    "run_reference_example",
    "run_simulation",
    "MapPair",
    "parse",
]
