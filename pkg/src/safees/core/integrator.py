from __future__ import annotations

"""
Fixed-step integration of the ES loop and the exact flow.

- `rk4_step` / `integrate_batch` / `integrate`: classical fourth-order
  Runge–Kutta on a batch of states ``(B, d)``; a row whose next state is not
  finite (or whose map evaluation leaves the expression domain) is frozen at
  its last valid sample while the rest of the batch continues.
- `Trajectory`: immutable, uniformly sampled record of one run, with derived
  scalar columns attached by `annotate_es` / `annotate_exact` at sample times.
- `time_rescale`: maps ES wall time onto the exact-flow clock (t ↦ k·ω_f·t).

The k-th step advances from ``t = k·dt``; samples are kept every
``sample_stride`` steps including t = 0 and t_final.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .dynamics import VectorField, dither_s, es_state_dim
from .expr import DomainError, MapPair
from .validators import EsConfig, SimSpec, default_es_dt, default_exact_dt

if TYPE_CHECKING:  # pragma: no cover
    from .minimizer import MinimizerEstimate

logger = logging.getLogger(__name__)

__all__ = [
    "IntegrationAborted",
    "Trajectory",
    "rk4_step",
    "integrate_batch",
    "integrate",
    "time_rescale",
    "annotate_es",
    "annotate_exact",
    "default_es_dt",
    "default_exact_dt",
    "check_dither_resolution",
    "MIN_STEPS_PER_DITHER_PERIOD",
]

MIN_STEPS_PER_DITHER_PERIOD = 20


class IntegrationAborted(RuntimeError):
    """
    A state component became NaN/∞ (or a map left its domain) during integration.

    ``last_valid_time`` is the time of the last finite state; ``trajectory``
    holds the samples recorded up to that point when available.
    """

    def __init__(
        self,
        message: str,
        last_valid_time: float,
        trajectory: Optional["Trajectory"] = None,
    ) -> None:
        super().__init__(f"{message} (last valid time t={last_valid_time:.17g})")
        self.last_valid_time = float(last_valid_time)
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# Trajectory container
# ---------------------------------------------------------------------------


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Uniformly sampled run of one system.

    Attributes
    ----------
    times:
        Sample times, shape ``(S,)``, spacing ``dt·sample_stride``.
    states:
        Shape ``(S, 3n+2)`` for ES runs, ``(S, n)`` for exact runs.
    system:
        ``"es"`` or ``"exact"``.
    dim:
        Parameter dimension n.
    derived:
        Named per-sample columns (``J``, ``h``, ``V1`` ...); ``theta`` is an
        ``(S, n)`` block.
    aborted_at:
        Last valid time when the run was cut short by a non-finite state.
    step_count:
        RK4 steps actually taken.
    """

    times: np.ndarray
    states: np.ndarray
    system: str
    dim: int
    derived: Mapping[str, np.ndarray] = field(default_factory=dict)
    aborted_at: Optional[float] = None
    step_count: int = 0

    def __post_init__(self) -> None:
        times = _frozen(self.times)
        states = _frozen(self.states)
        if times.ndim != 1 or states.ndim != 2 or states.shape[0] != times.shape[0]:
            raise ValueError(
                f"times {times.shape} and states {states.shape} do not describe one sampled run"
            )
        if times.size == 0:
            raise ValueError("trajectory must contain at least one sample")
        if times.size > 1 and np.any(np.diff(times) <= 0.0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.system not in ("es", "exact"):
            raise ValueError(f"unknown system {self.system!r}")
        width = es_state_dim(self.dim) if self.system == "es" else self.dim
        if states.shape[1] != width:
            raise ValueError(
                f"{self.system} states must have {width} columns for n={self.dim}, got {states.shape[1]}"
            )
        derived: Dict[str, np.ndarray] = {}
        for name, column in self.derived.items():
            col = _frozen(column)
            if col.shape[0] != times.shape[0]:
                raise ValueError(f"derived column {name!r} has {col.shape[0]} rows, expected {times.size}")
            derived[name] = col
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "derived", derived)

    @property
    def n_samples(self) -> int:
        return int(self.times.shape[0])

    @property
    def sample_interval(self) -> float:
        if self.n_samples < 2:
            return 0.0
        return float(self.times[1] - self.times[0])

    @property
    def theta_hat(self) -> np.ndarray:
        """θ̂ for ES runs, θ for exact runs; shape ``(S, n)``."""
        return self.states[:, : self.dim]

    @property
    def theta(self) -> np.ndarray:
        """Applied point θ = θ̂ + S(t) when annotated, otherwise the parameter columns."""
        if "theta" in self.derived:
            return self.derived["theta"]
        return self.theta_hat

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.derived[name]
        except KeyError:
            raise KeyError(f"trajectory has no derived column {name!r}; annotate it first") from None

    def state_labels(self) -> List[str]:
        n = self.dim
        if self.system == "exact":
            return [f"theta_{i}" for i in range(1, n + 1)]
        return (
            [f"theta_hat_{i}" for i in range(1, n + 1)]
            + [f"g_j_{i}" for i in range(1, n + 1)]
            + ["eta_j"]
            + [f"g_h_{i}" for i in range(1, n + 1)]
            + ["eta_h"]
        )

    def with_derived(self, **columns: np.ndarray) -> "Trajectory":
        merged = dict(self.derived)
        merged.update(columns)
        return replace(self, derived=merged)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def rk4_step(f: VectorField, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step of ``ẋ = f(t, x)``; ``x`` may carry a batch axis."""
    half = 0.5 * dt
    k1 = f(t, x)
    k2 = f(t + half, x + half * k1)
    k3 = f(t + half, x + half * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_rows_individually(f: VectorField, t: float, xs: np.ndarray, dt: float) -> np.ndarray:
    # Locates which rows leave the expression domain; those come back as NaN.
    out = np.empty_like(xs)
    for j in range(xs.shape[0]):
        try:
            out[j] = rk4_step(f, t, xs[j : j + 1], dt)[0]
        except DomainError as exc:
            logger.debug("row %d left the expression domain at t=%.6g: %s", j, t, exc)
            out[j] = np.nan
    return out


def _infer_dim(width: int, system: str) -> int:
    if system == "exact":
        return width
    if (width - 2) % 3 != 0 or width < 5:
        raise ValueError(f"ES state width {width} is not of the form 3n+2")
    return (width - 2) // 3


def integrate_batch(f: VectorField, x0: np.ndarray, spec: SimSpec) -> List[Trajectory]:
    """
    Integrate every row of ``x0`` (shape ``(B, d)``) with one vectorized RK4 loop.

    Returns one `Trajectory` per row in input order. Rows that produce a
    non-finite state are frozen; their trajectory ends at the last recorded
    sample and carries ``aborted_at``.
    """
    x = np.array(x0, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"x0 must be (d,) or (B, d), got shape {np.shape(x0)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial states must be finite")
    batch, width = x.shape
    dim = _infer_dim(width, spec.system)

    dt = spec.dt
    stride = spec.sample_stride
    n_steps = spec.n_steps
    n_samples = spec.n_samples

    samples = np.empty((n_samples, batch, width))
    samples[0] = x
    last_sample = np.zeros(batch, dtype=int)
    steps_taken = np.zeros(batch, dtype=int)
    aborted_at: List[Optional[float]] = [None] * batch
    active = np.ones(batch, dtype=bool)

    logger.info(
        "integrating %d %s run(s): %d steps of dt=%.6g, stride %d",
        batch, spec.system, n_steps, dt, stride,
    )
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for i in range(n_steps):
            t = i * dt
            all_active = bool(active.all())
            rows = np.arange(batch) if all_active else np.flatnonzero(active)
            if rows.size == 0:
                break
            xs = x if all_active else x[rows]
            try:
                nxt = rk4_step(f, t, xs, dt)
            except DomainError:
                nxt = _step_rows_individually(f, t, xs, dt)

            ok = np.all(np.isfinite(nxt), axis=1)
            if not ok.all():
                for r in rows[~ok]:
                    aborted_at[r] = t
                    logger.warning("run %d aborted: non-finite state after t=%.17g", r, t)
                active[rows[~ok]] = False
            x[rows[ok]] = nxt[ok]
            steps_taken[rows[ok]] += 1

            if (i + 1) % stride == 0:
                s = (i + 1) // stride
                samples[s] = x
                last_sample[active] = s

    times = np.arange(0, n_steps + 1, stride, dtype=float) * dt
    out: List[Trajectory] = []
    for b in range(batch):
        stop = int(last_sample[b]) + 1
        out.append(
            Trajectory(
                times=times[:stop],
                states=samples[:stop, b, :],
                system=spec.system,
                dim=dim,
                aborted_at=aborted_at[b],
                step_count=int(steps_taken[b]),
            )
        )
    return out


def integrate(f: VectorField, x0: Sequence[float], spec: SimSpec) -> Trajectory:
    """
    Integrate a single initial state.

    Raises `IntegrationAborted` (carrying the partial trajectory) when the
    state stops being finite.
    """
    x = np.asarray(x0, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"x0 must be a single state vector, got shape {x.shape}")
    (traj,) = integrate_batch(f, x[None, :], spec)
    if traj.aborted_at is not None:
        raise IntegrationAborted("non-finite state", traj.aborted_at, traj)
    return traj


def time_rescale(traj: Trajectory, factor: float) -> Trajectory:
    """Copy of ``traj`` with every time multiplied by ``factor``."""
    factor = float(factor)
    if not math.isfinite(factor) or factor <= 0.0:
        raise ValueError(f"time-rescale factor must be positive and finite, got {factor!r}")
    aborted = None if traj.aborted_at is None else traj.aborted_at * factor
    return replace(traj, times=traj.times * factor, aborted_at=aborted)


# ---------------------------------------------------------------------------
# Step size helpers
# ---------------------------------------------------------------------------


def check_dither_resolution(cfg: EsConfig, spec: SimSpec) -> None:
    """
    Require at least 20 steps per period of the fastest dither.

    Raises ``ValueError`` unless ``spec.allow_coarse_dither`` is set, in which
    case it only logs a warning.
    """
    if spec.system != "es":
        return
    period = 2.0 * math.pi / float(np.max(cfg.omega_array))
    limit = period / MIN_STEPS_PER_DITHER_PERIOD
    if spec.dt <= limit:
        return
    msg = (
        f"dt={spec.dt:.6g} resolves the fastest dither (period {period:.6g}) with fewer than "
        f"{MIN_STEPS_PER_DITHER_PERIOD} steps; use dt <= {limit:.6g}"
    )
    if spec.allow_coarse_dither:
        logger.warning("%s (continuing: allow_coarse_dither is set)", msg)
        return
    raise ValueError(msg)


# ---------------------------------------------------------------------------
# Derived scalars
# ---------------------------------------------------------------------------


def _lyapunov_columns(
    theta: np.ndarray,
    maps: MapPair,
    minimizer: Optional["MinimizerEstimate"],
    alpha: Optional[float],
) -> Dict[str, np.ndarray]:
    if minimizer is None:
        return {}
    from .diagnostics import lyapunov_v, lyapunov_v1

    cols = {"V1": np.asarray(lyapunov_v1(theta, maps, minimizer), dtype=float)}
    if alpha is not None:
        cols["V"] = np.asarray(lyapunov_v(theta, maps, minimizer, alpha), dtype=float)
    return cols


def annotate_es(
    traj: Trajectory,
    cfg: EsConfig,
    maps: MapPair,
    minimizer: Optional["MinimizerEstimate"] = None,
    alpha: Optional[float] = None,
) -> Trajectory:
    """
    Attach θ = θ̂ + S(t), J(θ̂), h(θ̂), J(θ), h(θ) and, with a minimizer, V₁(θ̂) / V(θ̂).
    """
    if traj.system != "es":
        raise ValueError("annotate_es expects an ES trajectory")
    theta_hat = traj.theta_hat
    theta = theta_hat + dither_s(traj.times[:, None], cfg)
    cols: Dict[str, np.ndarray] = {
        "theta": theta,
        "J_hat": np.asarray(maps.objective(theta_hat), dtype=float),
        "h_hat": np.asarray(maps.barrier(theta_hat), dtype=float),
        "J": np.asarray(maps.objective(theta), dtype=float),
        "h": np.asarray(maps.barrier(theta), dtype=float),
    }
    cols.update(_lyapunov_columns(theta_hat, maps, minimizer, alpha))
    return traj.with_derived(**cols)


def annotate_exact(
    traj: Trajectory,
    maps: MapPair,
    minimizer: Optional["MinimizerEstimate"] = None,
    alpha: Optional[float] = None,
) -> Trajectory:
    """Attach J(θ), h(θ) and, with a minimizer, V₁(θ) and V(θ) (V needs ``alpha``)."""
    if traj.system != "exact":
        raise ValueError("annotate_exact expects an exact-flow trajectory")
    theta = traj.theta_hat
    cols: Dict[str, np.ndarray] = {
        "J": np.asarray(maps.objective(theta), dtype=float),
        "h": np.asarray(maps.barrier(theta), dtype=float),
    }
    cols.update(_lyapunov_columns(theta, maps, minimizer, alpha))
    return traj.with_derived(**cols)
