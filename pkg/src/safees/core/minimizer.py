from __future__ import annotations

"""
Brute-force oracle for the constrained minimizer θ*_c = argmin {J(θ) : h(θ) ≥ 0}.

A coarse tensor grid over a user box locates the best feasible sample; local
grids around the incumbent then shrink by a constant factor per round. The
oracle only sees finitely many samples, so every reported quantity carries
the resolution of the last round.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from .expr import MapPair
from .validators import BoxSpec

logger = logging.getLogger(__name__)

__all__ = [
    "OracleError",
    "MinimizerEstimate",
    "find_constrained_minimizer",
    "collinearity_residual",
    "grid_points",
    "iter_chunks",
    "BOUNDARY_TOL",
    "MAX_GRID_POINTS",
]

BOUNDARY_TOL = 1e-4
MAX_GRID_POINTS = 2_000_000
CHUNK = 65_536


class OracleError(ValueError):
    """
    A grid oracle received degenerate input (empty feasible set, empty band ...).

    ``assumption`` names the structural requirement that failed numerically,
    e.g. ``"nonempty_safe_set"`` or ``"gradient_floor"``.
    """

    def __init__(self, message: str, assumption: Optional[str] = None) -> None:
        super().__init__(message)
        self.assumption = assumption


@dataclass(frozen=True, eq=False)
class MinimizerEstimate:
    theta_star: np.ndarray
    j_star: float
    h_at_star: float
    on_boundary: bool
    collinearity_residual: float
    history: Tuple[float, ...] = field(default_factory=tuple)
    resolution: float = 0.0

    def to_dict(self) -> dict:
        return {
            "theta_star": [float(x) for x in self.theta_star],
            "j_star": float(self.j_star),
            "h_at_star": float(self.h_at_star),
            "on_boundary": bool(self.on_boundary),
            "collinearity_residual": float(self.collinearity_residual),
            "resolution": float(self.resolution),
        }


# ---------------------------------------------------------------------------
# Grid helpers (shared with the diagnostics oracles)
# ---------------------------------------------------------------------------


def grid_points(box: BoxSpec, count: int) -> np.ndarray:
    """
    Tensor grid with ``count`` points per axis, C order, shape ``(count**n, n)``.

    ``count`` is lowered when the full grid would exceed `MAX_GRID_POINTS`.
    """
    n = box.dim
    per_axis = int(count)
    if per_axis ** n > MAX_GRID_POINTS:
        per_axis = max(2, int(math.floor(MAX_GRID_POINTS ** (1.0 / n))))
        logger.warning("grid of %d^%d points is too large; using %d per axis", count, n, per_axis)
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def iter_chunks(points: np.ndarray, size: int = CHUNK) -> Iterator[Tuple[int, np.ndarray]]:
    for start in range(0, points.shape[0], size):
        yield start, points[start : start + size]


def _values(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray) -> np.ndarray:
    out = np.empty(points.shape[0])
    for start, chunk in iter_chunks(points):
        out[start : start + chunk.shape[0]] = fn(chunk)
    return out


def _best_feasible(maps: MapPair, points: np.ndarray) -> Optional[Tuple[np.ndarray, float]]:
    with np.errstate(over="ignore", invalid="ignore"):
        h = _values(maps.barrier, points)
        feasible = np.isfinite(h) & (h >= 0.0)
        if not feasible.any():
            return None
        cand = points[feasible]
        j = _values(maps.objective, cand)
    j = np.where(np.isfinite(j), j, np.inf)
    best = int(np.argmin(j))
    if not math.isfinite(j[best]):
        return None
    return cand[best].copy(), float(j[best])


def collinearity_residual(maps: MapPair, theta: np.ndarray) -> float:
    """
    1 − |∇hᵀ∇J| / (‖∇h‖‖∇J‖) at θ.

    Zero when ∇J vanishes (an interior stationary point); one when only ∇h does.
    """
    sample = maps.sample(np.asarray(theta, dtype=float))
    nj = float(np.linalg.norm(sample.grad_j))
    nh = float(np.linalg.norm(sample.grad_h))
    if nj == 0.0:
        return 0.0
    if nh == 0.0:
        return 1.0
    cos = abs(float(np.dot(sample.grad_h, sample.grad_j))) / (nh * nj)
    return max(0.0, 1.0 - cos)


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def find_constrained_minimizer(
    maps: MapPair,
    box: BoxSpec,
    coarse: int = 400,
    refine_iters: int = 6,
    *,
    local_points: int = 21,
    shrink: float = 5.0,
) -> MinimizerEstimate:
    """
    Grid-search θ*_c inside ``box``.

    The coarse grid has ``coarse`` points per axis. Each refinement round
    lays a ``local_points``-per-axis grid over a cube around the incumbent
    (initial half-width two coarse spacings, divided by ``shrink`` per round,
    clipped to the box) and keeps a new point only if it strictly improves J
    among feasible samples, so the recorded J history is non-increasing.

    Raises `OracleError` if no sample in the coarse grid satisfies h ≥ 0.
    """
    if box.dim != maps.dim:
        raise ValueError(f"box has dimension {box.dim}, maps have dim={maps.dim}")
    if coarse < 2 or refine_iters < 0 or local_points < 3 or shrink <= 1.0:
        raise ValueError("need coarse >= 2, refine_iters >= 0, local_points >= 3, shrink > 1")

    lower = np.asarray(box.lower, dtype=float)
    upper = np.asarray(box.upper, dtype=float)
    found = _best_feasible(maps, grid_points(box, coarse))
    if found is None:
        raise OracleError(
            f"no sample with h >= 0 in box {box.lower}..{box.upper} at {coarse} points per axis; "
            "the safe set is empty at this resolution",
            assumption="nonempty_safe_set",
        )
    incumbent, j_best = found
    history: List[float] = [j_best]
    half = 2.0 * (upper - lower) / (coarse - 1)
    spacing = float(np.max(upper - lower)) / (coarse - 1)

    for round_no in range(refine_iters):
        local = BoxSpec(
            lower=[float(x) for x in np.maximum(incumbent - half, lower)],
            upper=[float(x) for x in np.minimum(incumbent + half, upper)],
        )
        found = _best_feasible(maps, grid_points(local, local_points))
        if found is not None and found[1] < j_best:
            incumbent, j_best = found
        history.append(j_best)
        spacing = float(np.max(2.0 * half)) / (local_points - 1)
        logger.debug("refine round %d: J=%.12g at %s", round_no + 1, j_best, incumbent)
        half = half / shrink

    h_star = float(maps.barrier(incumbent))
    on_boundary = abs(h_star) <= BOUNDARY_TOL
    residual = collinearity_residual(maps, incumbent)
    logger.info(
        "constrained minimizer %s: J=%.10g h=%.3g on_boundary=%s collinearity_residual=%.3g",
        np.array2string(incumbent, precision=6), j_best, h_star, on_boundary, residual,
    )
    return MinimizerEstimate(
        theta_star=incumbent,
        j_star=j_best,
        h_at_star=h_star,
        on_boundary=on_boundary,
        collinearity_residual=residual,
        history=tuple(history),
        resolution=spacing,
    )
