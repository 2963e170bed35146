from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from safees.core.expr import MapPair  # noqa: E402
from safees.core.validators import EsConfig  # noqa: E402
from safees.scenarios import REFERENCE_H, REFERENCE_J  # noqa: E402


@pytest.fixture(scope="session")
def maps() -> MapPair:
    """The two-bump reference pair (J, h) over ℝ²."""
    return MapPair.from_text(REFERENCE_J, REFERENCE_H, 2)


@pytest.fixture
def es_cfg() -> EsConfig:
    return EsConfig(k=5e-4, c=1.0, omega_f=10.0, m_plus=1e4, a=0.1, omegas=[10, 13])


def _write_config(path: Path, **overrides) -> Path:
    """Small exact-flow experiment on the reference maps, written as JSON."""
    payload = {
        "name": "smoke",
        "dim": 2,
        "j_expr": REFERENCE_J,
        "h_expr": REFERENCE_H,
        "es": {"k": 5e-4, "c": 1.0, "omega_f": 10.0, "m_plus": 1e4, "a": 0.1, "omegas": [10, 13]},
        "sim": {"dt": 0.01, "t_final": 0.5, "sample_stride": 5, "system": "exact"},
        "initial_conditions": [[-1.0, 0.0], [0.5, 0.2]],
        "output": str(path.parent / "out"),
    }
    payload.update(overrides)
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


@pytest.fixture
def make_config(tmp_path):
    """Factory writing ``config.json`` under ``tmp_path`` with top-level overrides."""

    def factory(**overrides) -> Path:
        return _write_config(tmp_path / "config.json", **overrides)

    return factory
