from __future__ import annotations

"""
Pydantic models for configuration and results.

These models are:

- Strict enough to catch bad inputs early (non-finite or non-positive
  constants, mismatched dimensions).
- Flexible enough to accept JSON / dict / CLI inputs (frequencies as numbers,
  ``"p/q"`` strings or ``[p, q]`` pairs).
- Plain-data: arrays cross this boundary as lists so every model serializes
  with ``model_dump_json``.
"""

import math
from fractions import Fraction
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

__all__ = [
    "System",
    "EsConfig",
    "SimSpec",
    "BoxSpec",
    "GridSpec",
    "DiagnosticsSettings",
    "ExperimentConfig",
    "CheckResult",
    "DiagnosticsReport",
    "TrajectoryRecord",
    "RunSummary",
    "ScenarioComparison",
    "ReferenceExampleSummary",
    "as_fraction",
    "default_es_dt",
    "default_exact_dt",
]

System = Literal["es", "exact"]


def _finite(name: str, v: Any) -> float:
    try:
        fv = float(v)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name} must be numeric, got {v!r}") from exc
    if not math.isfinite(fv):
        raise ValueError(f"{name} must be finite, got {fv!r}")
    return fv


def _positive(name: str, v: Any) -> float:
    fv = _finite(name, v)
    if fv <= 0.0:
        raise ValueError(f"{name} must be strictly positive, got {fv!r}")
    return fv


def as_fraction(value: Any) -> Fraction:
    """
    Exact rational for a frequency given as an int, a decimal, ``"p/q"`` or ``[p, q]``.

    Floats are read through their shortest repr, so ``6.5`` becomes ``13/2``.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise ValueError(f"rational pair must have two entries, got {value!r}")
        return Fraction(int(value[0]), int(value[1]))
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"frequency must be finite, got {value!r}")
        return Fraction(repr(value))
    return Fraction(str(value).strip())


# ---------------------------------------------------------------------------
# Controller and simulation settings
# ---------------------------------------------------------------------------


class EsConfig(BaseModel):
    """
    Design constants of the safe ES controller.

    Fields
    ------
    k:
        Parameter-update gain.
    c:
        Barrier decay rate.
    omega_f:
        Filter rate (rad/time) shared by all four estimator channels.
    m_plus:
        Clamp M⁺ on ‖G_h‖⁻².
    a:
        Dither amplitude.
    omegas:
        Dither frequencies ω_1..ω_n (rad/time). Rational inputs are accepted
        and kept exactly by `as_fraction` for the frequency conditions.
    """

    model_config = ConfigDict(extra="ignore", frozen=True)

    k: float = Field(..., description="Parameter-update gain")
    c: float = Field(..., description="Barrier decay rate")
    omega_f: float = Field(..., description="Filter rate")
    m_plus: float = Field(..., description="Gain clamp M+")
    a: float = Field(..., description="Dither amplitude")
    omegas: List[float] = Field(..., min_length=1, description="Dither frequencies")
    omegas_exact: Optional[List[str]] = Field(
        None, description="Exact rational form of omegas, filled in from the raw input"
    )

    @model_validator(mode="before")
    @classmethod
    def _keep_exact(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("omegas") is not None and not data.get("omegas_exact"):
            try:
                exact = [str(as_fraction(w)) for w in data["omegas"]]
            except (TypeError, ValueError, ZeroDivisionError):
                return data
            data = {**data, "omegas_exact": exact}
        return data

    @field_validator("k", "c", "omega_f", "m_plus", "a", mode="before")
    @classmethod
    def _strictly_positive(cls, v: Any, info: Any) -> float:
        return _positive(info.field_name, v)

    @field_validator("omegas", mode="before")
    @classmethod
    def _omegas_ok(cls, v: Any) -> List[float]:
        if not isinstance(v, Sequence) or isinstance(v, str):
            raise ValueError(f"omegas must be a list, got {v!r}")
        out: List[float] = []
        for i, item in enumerate(v, 1):
            try:
                frac = as_fraction(item)
            except (ValueError, ZeroDivisionError) as exc:
                raise ValueError(f"omegas[{i}] is not a rational number: {item!r}") from exc
            out.append(_positive(f"omegas[{i}]", float(frac)))
        return out

    @property
    def dim(self) -> int:
        return len(self.omegas)

    @property
    def omega_array(self) -> np.ndarray:
        return np.asarray(self.omegas, dtype=float)

    def omega_fractions(self) -> List[Fraction]:
        if self.omegas_exact is not None and len(self.omegas_exact) == len(self.omegas):
            return [Fraction(w) for w in self.omegas_exact]
        return [as_fraction(w) for w in self.omegas]

    @property
    def closed_loop_rate(self) -> float:
        """c·k·ω_f, the decay rate of the practical-safety bound."""
        return self.c * self.k * self.omega_f


class SimSpec(BaseModel):
    """
    Fixed-step integration settings.

    ``t_final / dt`` must round to a step count that is a multiple of
    ``sample_stride`` so the recorded grid is uniform and ends at t_final;
    `SimSpec.aligned` snaps t_final onto such a grid.
    """

    model_config = ConfigDict(extra="ignore", frozen=True)

    dt: float
    t_final: float
    sample_stride: int = Field(1, ge=1)
    system: System = "es"
    allow_coarse_dither: bool = Field(
        False, description="Downgrade the dither-resolution check to a warning"
    )

    @field_validator("dt", "t_final", mode="before")
    @classmethod
    def _positive_times(cls, v: Any, info: Any) -> float:
        return _positive(info.field_name, v)

    @field_validator("system", mode="before")
    @classmethod
    def _system_ok(cls, v: Any) -> str:
        norm = str(v).strip().lower()
        if norm not in ("es", "exact"):
            raise ValueError(f"system must be 'es' or 'exact', got {v!r}")
        return norm

    @model_validator(mode="after")
    def _grid_ok(self) -> "SimSpec":
        ratio = self.t_final / self.dt
        steps = int(round(ratio))
        if steps < 1:
            raise ValueError(f"t_final={self.t_final} is shorter than one step dt={self.dt}")
        if steps % self.sample_stride != 0:
            raise ValueError(
                f"step count {steps} is not a multiple of sample_stride={self.sample_stride}; "
                "use SimSpec.aligned(...) to snap t_final"
            )
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def n_samples(self) -> int:
        return self.n_steps // self.sample_stride + 1

    @property
    def sample_interval(self) -> float:
        return self.dt * self.sample_stride

    @classmethod
    def aligned(
        cls,
        *,
        dt: float,
        t_final: float,
        sample_stride: int = 1,
        system: System = "es",
        allow_coarse_dither: bool = False,
    ) -> "SimSpec":
        """Build a spec whose t_final is the nearest multiple of ``dt·sample_stride``."""
        blocks = max(1, int(round(float(t_final) / (float(dt) * sample_stride))))
        return cls(
            dt=dt,
            t_final=blocks * sample_stride * float(dt),
            sample_stride=sample_stride,
            system=system,
            allow_coarse_dither=allow_coarse_dither,
        )


def default_es_dt(cfg: EsConfig) -> float:
    """(2π/max ω_i)/50."""
    return 2.0 * math.pi / float(np.max(cfg.omega_array)) / 50.0


def default_exact_dt(c: float) -> float:
    """1e-3 of the barrier time constant 1/c."""
    return 1e-3 / float(c)


class BoxSpec(BaseModel):
    """Axis-aligned box ``[lower, upper]`` in ℝⁿ."""

    model_config = ConfigDict(extra="ignore", frozen=True)

    lower: List[float]
    upper: List[float]

    @model_validator(mode="after")
    def _bounds_ok(self) -> "BoxSpec":
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must be non-empty and of equal length")
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper), 1):
            _finite(f"lower[{i}]", lo)
            _finite(f"upper[{i}]", hi)
            if hi < lo:
                raise ValueError(f"upper[{i}]={hi} is below lower[{i}]={lo}")
        return self

    @property
    def dim(self) -> int:
        return len(self.lower)


class GridSpec(BoxSpec):
    """
    Tensor grid over a box with ``counts[i]`` points on axis i.

    Points are enumerated in C order (last axis fastest).
    """

    counts: List[int]

    @model_validator(mode="after")
    def _counts_ok(self) -> "GridSpec":
        if len(self.counts) != len(self.lower):
            raise ValueError("counts must have one entry per axis")
        if any(int(c) < 1 for c in self.counts):
            raise ValueError(f"grid counts must be >= 1, got {self.counts}")
        return self

    @classmethod
    def square(cls, lower: Sequence[float], upper: Sequence[float], count: int) -> "GridSpec":
        return cls(lower=list(lower), upper=list(upper), counts=[int(count)] * len(lower))

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, int(c)) for lo, hi, c in zip(self.lower, self.upper, self.counts)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


class DiagnosticsSettings(BaseModel):
    """Enabled checks and their tolerances."""

    model_config = ConfigDict(extra="ignore")

    enabled: List[str] = Field(
        default_factory=lambda: [
            "frequencies",
            "gradients",
            "minimizer",
            "alpha",
            "angle",
            "invariance",
            "lyapunov",
            "practical_safety",
            "estimator",
            "retention",
        ]
    )
    invariance_tol: float = 1e-3
    lyapunov_tol: float = 1e-6
    exclusion_radius: float = 0.05
    delta: float = 0.05
    transient: Optional[float] = Field(None, description="Defaults to 5/omega_f")
    rho: float = -0.25
    alpha_grid: int = 400
    r_star: float = 0.5
    minimizer_coarse: int = 400
    minimizer_refine: int = 6
    box: Optional[BoxSpec] = Field(None, description="Defaults to the IC grid box widened by 1")
    gradient_points: int = 100
    gradient_step: float = 1e-5
    alpha_case: Literal["A", "B"] = "A"
    retention_enter: float = 0.05
    retention_floor: float = -0.02
    convergence_radius: Optional[float] = Field(
        None, description="Defaults to 0.3 for ES runs and 1e-2 for exact runs"
    )

    @field_validator(
        "invariance_tol", "lyapunov_tol", "exclusion_radius", "delta", "r_star", "gradient_step",
        mode="before",
    )
    @classmethod
    def _tol_positive(cls, v: Any, info: Any) -> float:
        return _positive(info.field_name, v)

    @field_validator("rho", mode="before")
    @classmethod
    def _rho_ok(cls, v: Any) -> float:
        fv = _finite("rho", v)
        if fv > 0.0:
            raise ValueError(f"rho must be non-positive, got {fv!r}")
        return fv

    @field_validator("alpha_grid", "minimizer_coarse", "gradient_points")
    @classmethod
    def _count_ok(cls, v: int, info: Any) -> int:
        if int(v) < 2:
            raise ValueError(f"{info.field_name} must be >= 2, got {v!r}")
        return int(v)

    def is_enabled(self, name: str) -> bool:
        return name in self.enabled


class ExperimentConfig(BaseModel):
    """
    One experiment: maps, controller constants, integration and diagnostics.

    Exactly one of ``initial_conditions`` (explicit θ̂(0) list) or ``ic_grid``
    must be given. ``estimator_init`` is the stacked (G_J, η_J, G_h, η_h)
    initial value of length 2n+2 and defaults to all zeros.
    Without ``sim.dt`` the step defaults to (2π/max ω_i)/50 for ES runs and
    1e-3/c for exact runs.
    """

    model_config = ConfigDict(extra="ignore")

    name: str = "experiment"
    dim: int = Field(..., ge=1)
    j_expr: str = Field(..., min_length=1)
    h_expr: str = Field(..., min_length=1)
    es: EsConfig
    sim: SimSpec
    initial_conditions: Optional[List[List[float]]] = None
    ic_grid: Optional[GridSpec] = None
    estimator_init: Optional[List[float]] = None
    alpha: Optional[float] = Field(None, description="Lyapunov weight; auto-selected if omitted")
    diagnostics: DiagnosticsSettings = Field(default_factory=DiagnosticsSettings)
    output: str = "out"
    workers: int = Field(1, ge=1)
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _default_step(cls, data: Any) -> Any:
        # sim.dt may be omitted; t_final is then snapped onto the default grid.
        if not isinstance(data, dict):
            return data
        sim, es = data.get("sim"), data.get("es")
        if not isinstance(sim, dict) or sim.get("dt") is not None or "t_final" not in sim:
            return data
        try:
            es_cfg = es if isinstance(es, EsConfig) else EsConfig.model_validate(es)
            system = str(sim.get("system", "es")).strip().lower()
            dt = default_es_dt(es_cfg) if system == "es" else default_exact_dt(es_cfg.c)
            aligned = SimSpec.aligned(
                dt=dt,
                t_final=_positive("t_final", sim["t_final"]),
                sample_stride=int(sim.get("sample_stride", 1)),
                system=system,  # type: ignore[arg-type]
                allow_coarse_dither=bool(sim.get("allow_coarse_dither", False)),
            )
        except (ValidationError, ValueError, TypeError):
            # Leave the error to the field validators.
            return data
        return {**data, "sim": aligned.model_dump()}

    @field_validator("alpha", mode="before")
    @classmethod
    def _alpha_ok(cls, v: Any) -> Optional[float]:
        return None if v is None else _positive("alpha", v)

    @model_validator(mode="after")
    def _shapes_ok(self) -> "ExperimentConfig":
        n = self.dim
        if self.es.dim != n:
            raise ValueError(f"es.omegas has {self.es.dim} entries but dim={n}")
        if (self.initial_conditions is None) == (self.ic_grid is None):
            raise ValueError("give exactly one of initial_conditions or ic_grid")
        if self.initial_conditions is not None:
            if not self.initial_conditions:
                raise ValueError("initial_conditions must not be empty")
            for i, ic in enumerate(self.initial_conditions, 1):
                if len(ic) != n:
                    raise ValueError(f"initial_conditions[{i}] has {len(ic)} entries, dim={n}")
                for x in ic:
                    _finite(f"initial_conditions[{i}]", x)
        if self.ic_grid is not None and self.ic_grid.dim != n:
            raise ValueError(f"ic_grid has dimension {self.ic_grid.dim}, dim={n}")
        if self.estimator_init is not None and len(self.estimator_init) != 2 * n + 2:
            raise ValueError(
                f"estimator_init must have 2n+2={2 * n + 2} entries, got {len(self.estimator_init)}"
            )
        return self

    def initial_points(self) -> np.ndarray:
        """θ̂(0) vectors in enumeration order, shape ``(N, n)``."""
        if self.initial_conditions is not None:
            return np.asarray(self.initial_conditions, dtype=float)
        assert self.ic_grid is not None
        return self.ic_grid.points()

    def estimator_vector(self) -> np.ndarray:
        if self.estimator_init is None:
            return np.zeros(2 * self.dim + 2)
        return np.asarray(self.estimator_init, dtype=float)

    def search_box(self) -> BoxSpec:
        """Box used by the grid oracles."""
        if self.diagnostics.box is not None:
            return self.diagnostics.box
        pts = self.initial_points()
        return BoxSpec(
            lower=[float(x) - 1.0 for x in pts.min(axis=0)],
            upper=[float(x) + 1.0 for x in pts.max(axis=0)],
        )

    def transient(self) -> float:
        if self.diagnostics.transient is not None:
            return float(self.diagnostics.transient)
        return 5.0 / self.es.omega_f

    def convergence_radius(self) -> float:
        if self.diagnostics.convergence_radius is not None:
            return float(self.diagnostics.convergence_radius)
        return 0.3 if self.sim.system == "es" else 1e-2


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


class CheckResult(BaseModel):
    """
    Outcome of one verified inequality.

    ``margin`` is the worst-case slack (negative means violated);
    ``worst_location`` is the time or θ where it occurred.
    """

    model_config = ConfigDict(extra="ignore", populate_by_name=True)

    name: str = Field(..., min_length=1)
    passed: bool = Field(..., alias="pass")
    margin: Optional[float] = None
    worst_location: Optional[Any] = None
    details: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("margin", mode="before")
    @classmethod
    def _margin_ok(cls, v: Any) -> Optional[float]:
        if v is None:
            return None
        fv = float(v)
        # JSON has no representation for inf/nan.
        return fv if math.isfinite(fv) else None

    @field_validator("worst_location", mode="before")
    @classmethod
    def _location_ok(cls, v: Any) -> Any:
        if isinstance(v, np.ndarray):
            return [float(x) for x in v.ravel()]
        if isinstance(v, np.generic):
            return v.item()
        return v


class DiagnosticsReport(BaseModel):
    """Ordered collection of check results; every check name appears once."""

    model_config = ConfigDict(extra="ignore")

    checks: List[CheckResult] = Field(default_factory=list)

    @field_validator("checks")
    @classmethod
    def _unique(cls, v: List[CheckResult]) -> List[CheckResult]:
        seen = set()
        for check in v:
            if check.name in seen:
                raise ValueError(f"duplicate check name {check.name!r}")
            seen.add(check.name)
        return v

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def get(self, name: str) -> CheckResult:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)


class TrajectoryRecord(BaseModel):
    """Per-initial-condition summary of a run."""

    model_config = ConfigDict(extra="ignore")

    index: int
    initial_theta_hat: List[float]
    final_theta_hat: List[float]
    final_distance: Optional[float] = None
    min_h: float
    safety_margin: Optional[float] = None
    converged: Optional[bool] = None
    steps: int
    aborted_at: Optional[float] = None
    wall_time: float = Field(0.0, exclude=True)


class RunSummary(BaseModel):
    """Summary written next to the trajectory CSVs."""

    model_config = ConfigDict(extra="ignore")

    name: str
    system: System
    theta_star: Optional[List[float]] = None
    records: List[TrajectoryRecord] = Field(default_factory=list)

    @property
    def aborted(self) -> bool:
        return any(r.aborted_at is not None for r in self.records)


class ScenarioComparison(BaseModel):
    """Scenario-level metrics used to compare (c, k) settings of the reference example."""

    model_config = ConfigDict(extra="ignore")

    scenario: str
    c: float
    k: float
    t_final: float
    mean_final_distance: float
    min_h: float
    transient_total_variation: float
    n_runs: int
    probe_min_h: Optional[float] = Field(
        None, description="Min over time of h(θ̂) from the probe initial condition"
    )
    retention_ok: Optional[bool] = None
    aborted_runs: int = 0


class ReferenceExampleSummary(BaseModel):
    """Comparison document for the three baked-in (c, k) scenarios."""

    model_config = ConfigDict(extra="ignore")

    theta_star: List[float]
    probe_initial_condition: List[float] = Field(default_factory=list)
    scenarios: List[ScenarioComparison]
    claims: Dict[str, Optional[bool]] = Field(default_factory=dict)

    def by_name(self) -> Dict[str, ScenarioComparison]:
        return {s.scenario: s for s in self.scenarios}
