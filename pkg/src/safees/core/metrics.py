from __future__ import annotations

"""
Scalar summaries of trajectories: distances to θ*_c, minimum barrier value,
and the transient total-variation measure used to compare how smooth the
ES parameter paths are across (c, k) settings.
"""

from typing import Optional, Sequence

import numpy as np

from .integrator import Trajectory
from .validators import ScenarioComparison, TrajectoryRecord

__all__ = [
    "total_variation",
    "transient_total_variation",
    "final_distance",
    "min_barrier",
    "trajectory_record",
    "scenario_comparison",
    "TRANSIENT_FRACTION",
]

TRANSIENT_FRACTION = 0.1


def total_variation(path: np.ndarray) -> float:
    """Length of a sampled path, Σ‖x_{i+1} − x_i‖ over rows of ``path``."""
    arr = np.asarray(path, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(arr, axis=0), axis=1)))


def transient_total_variation(traj: Trajectory, fraction: float = TRANSIENT_FRACTION) -> float:
    """Total variation of θ̂ over samples with t ≤ t₀ + fraction·(t_final − t₀)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction!r}")
    t = traj.times
    cutoff = t[0] + fraction * (t[-1] - t[0])
    return total_variation(traj.theta_hat[t <= cutoff])


def final_distance(traj: Trajectory, theta_star: Sequence[float]) -> float:
    return float(np.linalg.norm(traj.theta_hat[-1] - np.asarray(theta_star, dtype=float)))


def min_barrier(traj: Trajectory, column: str = "h") -> float:
    """Smallest recorded value of a barrier column (h at the applied point by default)."""
    return float(np.min(traj.column(column)))


def trajectory_record(
    index: int,
    traj: Trajectory,
    *,
    theta_star: Optional[Sequence[float]] = None,
    safety_margin: Optional[float] = None,
    radius: Optional[float] = None,
    wall_time: float = 0.0,
) -> TrajectoryRecord:
    distance = None if theta_star is None else final_distance(traj, theta_star)
    converged = None
    if distance is not None and radius is not None and traj.aborted_at is None:
        converged = distance <= radius
    return TrajectoryRecord(
        index=index,
        initial_theta_hat=[float(x) for x in traj.theta_hat[0]],
        final_theta_hat=[float(x) for x in traj.theta_hat[-1]],
        final_distance=distance,
        min_h=min_barrier(traj),
        safety_margin=safety_margin,
        converged=converged,
        steps=traj.step_count,
        aborted_at=traj.aborted_at,
        wall_time=wall_time,
    )


def scenario_comparison(
    name: str,
    c: float,
    k: float,
    trajectories: Sequence[Trajectory],
    theta_star: Sequence[float],
    *,
    probe: Optional[Trajectory] = None,
    retention_ok: Optional[bool] = None,
) -> ScenarioComparison:
    """
    Aggregate one scenario: mean final distance, min h over all runs, mean
    transient total variation.
    """
    if not trajectories:
        raise ValueError(f"scenario {name!r} has no trajectories")
    return ScenarioComparison(
        scenario=name,
        c=c,
        k=k,
        t_final=float(max(tr.times[-1] for tr in trajectories)),
        mean_final_distance=float(np.mean([final_distance(tr, theta_star) for tr in trajectories])),
        min_h=float(min(min_barrier(tr) for tr in trajectories)),
        transient_total_variation=float(np.mean([transient_total_variation(tr) for tr in trajectories])),
        n_runs=len(trajectories),
        probe_min_h=None if probe is None else min_barrier(probe, "h_hat"),
        retention_ok=retention_ok,
        aborted_runs=sum(1 for tr in trajectories if tr.aborted_at is not None),
    )
