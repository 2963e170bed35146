from __future__ import annotations

"""
Numerical certificates for the safe ES loop and its exact flow.

Every check returns a `CheckResult` (name, pass, worst margin, worst
location, details). Margins are slacks: negative means the inequality was
violated by that amount. Grid oracles (α selection, angle condition,
assumption probes) work on tensor grids over a user box and therefore only
certify at the resolution of that grid.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dynamics import Disturbance, EsState, disturbed_rhs, dither_s, exact_rhs, hdot_along_flow
from .expr import MapPair, fd_grad
from .integrator import Trajectory
from .minimizer import (
    BOUNDARY_TOL,
    MinimizerEstimate,
    OracleError,
    grid_points,
    iter_chunks,
)
from .validators import BoxSpec, CheckResult, EsConfig, as_fraction

logger = logging.getLogger(__name__)

__all__ = [
    "OracleError",
    "FrequencyCheck",
    "AlphaSelection",
    "AngleCondition",
    "DisturbanceGain",
    "validate_frequencies",
    "check_frequencies",
    "check_gradients",
    "check_minimizer",
    "lyapunov_v1",
    "lyapunov_v",
    "select_alpha",
    "check_alpha",
    "check_angle_condition",
    "angle_check_result",
    "barrier_rate_margin",
    "check_invariance",
    "check_lyapunov_decrease",
    "check_practical_safety",
    "check_safe_set_retention",
    "estimator_error",
    "check_estimator_decay",
    "check_reduction_equivalence",
    "check_convergence",
    "estimate_disturbance_gain",
    "probe_assumptions",
    "combine_checks",
    "L_FLOOR",
    "COLLINEARITY_TOL",
]

L_FLOOR = 1e-8
COLLINEARITY_TOL = 1e-2

ArrayLike = Union[Sequence[float], np.ndarray]


# ---------------------------------------------------------------------------
# Frequencies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyCheck:
    ok: bool
    violations: Tuple[str, ...] = ()


def validate_frequencies(omegas: Sequence[Any]) -> FrequencyCheck:
    """
    Distinctness ω_i ≠ ω_j and ω_i + ω_j ≠ ω_k for distinct i, j, k.

    Frequencies are compared as exact rationals (ints, ``"p/q"``, ``[p, q]``
    or decimals read through their repr). Indices in messages are 1-based.
    """
    fracs: List[Fraction] = [as_fraction(w) for w in omegas]
    violations: List[str] = []
    for (i, wi), (j, wj) in combinations(enumerate(fracs, 1), 2):
        if wi == wj:
            violations.append(f"omega_{i} = omega_{j} ({wi})")
    for (i, wi), (j, wj) in combinations(enumerate(fracs, 1), 2):
        for k, wk in enumerate(fracs, 1):
            if k in (i, j):
                continue
            if wi + wj == wk:
                violations.append(f"omega_{i} + omega_{j} = omega_{k} ({wi} + {wj} = {wk})")
    return FrequencyCheck(ok=not violations, violations=tuple(violations))


def check_frequencies(omegas: Sequence[Any]) -> CheckResult:
    verdict = validate_frequencies(omegas)
    return CheckResult(
        name="frequencies",
        passed=verdict.ok,
        margin=None,
        worst_location=None,
        details={
            "omegas": [str(as_fraction(w)) for w in omegas],
            "violations": list(verdict.violations),
        },
    )


# ---------------------------------------------------------------------------
# Gradients and minimizer
# ---------------------------------------------------------------------------


def check_gradients(
    maps: MapPair,
    box: BoxSpec,
    points: int = 100,
    step: float = 1e-5,
    seed: int = 0,
    rtol: float = 1e-6,
) -> CheckResult:
    """Dual-number gradients against central differences at seeded random points in ``box``."""
    rng = np.random.default_rng(seed)
    lower = np.asarray(box.lower, dtype=float)
    upper = np.asarray(box.upper, dtype=float)
    theta = lower + (upper - lower) * rng.random((int(points), maps.dim))

    worst = -math.inf
    worst_at: Optional[np.ndarray] = None
    worst_map = ""
    for label, ast in (("J", maps.j_ast), ("h", maps.h_ast)):
        exact = maps.objective_grad(theta) if label == "J" else maps.barrier_grad(theta)
        approx = fd_grad(ast, theta, step)
        err = np.linalg.norm(exact - approx, axis=1) / (1.0 + np.linalg.norm(exact, axis=1))
        idx = int(np.argmax(err))
        if err[idx] > worst:
            worst, worst_at, worst_map = float(err[idx]), theta[idx], label
    return CheckResult(
        name="gradients",
        passed=worst <= rtol,
        margin=rtol - worst,
        worst_location=worst_at,
        details={"map": worst_map, "points": int(points), "step": step, "seed": seed, "rtol": rtol},
    )


def check_minimizer(est: MinimizerEstimate, collinearity_tol: float = COLLINEARITY_TOL) -> CheckResult:
    """Feasibility of the oracle point and, on the boundary, ∇J ∥ ∇h."""
    feasible_margin = est.h_at_star + BOUNDARY_TOL
    margins = [feasible_margin]
    if est.on_boundary:
        margins.append(collinearity_tol - est.collinearity_residual)
    margin = min(margins)
    return CheckResult(
        name="minimizer",
        passed=margin >= 0.0,
        margin=margin,
        worst_location=est.theta_star,
        details=est.to_dict(),
    )


# ---------------------------------------------------------------------------
# Lyapunov functions
# ---------------------------------------------------------------------------


def lyapunov_v1(theta: ArrayLike, maps: MapPair, minimizer: MinimizerEstimate) -> Union[float, np.ndarray]:
    """V₁(θ) = J(θ) − J(θ*_c)."""
    value = np.asarray(maps.objective(theta)) - minimizer.j_star
    return float(value) if value.ndim == 0 else value


def lyapunov_v(
    theta: ArrayLike, maps: MapPair, minimizer: MinimizerEstimate, alpha: float
) -> Union[float, np.ndarray]:
    """V(θ) = max{−α·h(θ), 0} + max{J(θ) − J(θ*_c), 0}."""
    if not alpha > 0.0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    h = np.asarray(maps.barrier(theta))
    v1 = np.asarray(maps.objective(theta)) - minimizer.j_star
    value = np.maximum(-alpha * h, 0.0) + np.maximum(v1, 0.0)
    return float(value) if value.ndim == 0 else value


# ---------------------------------------------------------------------------
# Grid oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _GridFields:
    points: np.ndarray
    h: np.ndarray
    grad_j: np.ndarray
    grad_h: np.ndarray
    spacing: float

    @property
    def norm_grad_j(self) -> np.ndarray:
        return np.linalg.norm(self.grad_j, axis=1)

    @property
    def norm_grad_h(self) -> np.ndarray:
        return np.linalg.norm(self.grad_h, axis=1)


def _grid_fields(maps: MapPair, box: BoxSpec, count: int) -> _GridFields:
    pts = grid_points(box, count)
    n_pts = pts.shape[0]
    h = np.empty(n_pts)
    gj = np.empty((n_pts, maps.dim))
    gh = np.empty((n_pts, maps.dim))
    for start, chunk in iter_chunks(pts):
        sample = maps.sample(chunk)
        stop = start + chunk.shape[0]
        h[start:stop] = sample.h
        gj[start:stop] = sample.grad_j
        gh[start:stop] = sample.grad_h
    per_axis = round(n_pts ** (1.0 / maps.dim))
    widths = np.asarray(box.upper, dtype=float) - np.asarray(box.lower, dtype=float)
    spacing = float(np.max(widths)) / max(per_axis - 1, 1)
    return _GridFields(points=pts, h=h, grad_j=gj, grad_h=gh, spacing=spacing)


@dataclass(frozen=True)
class AlphaSelection:
    """
    Lyapunov weight α with the quantities it was derived from.

    ``case`` is ``"A"`` (compact C_ρ: α > sup‖∇J‖/L) or ``"B"`` (angle-condition
    route: α > max{sup‖∇J‖/L, c|ρ|/(L²·(1 − f*²))}).
    """

    alpha: float
    l_estimate: float
    sup_grad_j: float
    rho: float
    sample_count: int
    case: str = "A"
    band_count: int = 0
    resolution: float = 0.0
    f_star: Optional[float] = None
    lower_bound: float = 0.0


def select_alpha(
    maps: MapPair,
    rho: float,
    box: BoxSpec,
    count: int = 400,
    *,
    case: str = "A",
    c: Optional[float] = None,
    f_star: Optional[float] = None,
    headroom: float = 1.1,
) -> AlphaSelection:
    """
    Choose α from grid samples of ``box`` (assumed to contain C_ρ).

    L is the smallest ‖∇h‖ over samples with ρ ≤ h ≤ 0 and sup‖∇J‖ the largest
    ‖∇J‖ over samples with h ≥ ρ. α is ``headroom`` times the case bound and
    falls back to 1.0 when the bound is zero (constant J).
    """
    if rho > 0.0:
        raise ValueError(f"rho must be non-positive, got {rho!r}")
    if case not in ("A", "B"):
        raise ValueError(f"case must be 'A' or 'B', got {case!r}")
    fields = _grid_fields(maps, box, count)
    band = (fields.h >= rho) & (fields.h <= 0.0)
    level_set = fields.h >= rho
    if not band.any():
        raise OracleError(
            f"no grid samples with {rho} <= h <= 0; rho is degenerate for this box",
            assumption="nonempty_band",
        )
    l_est = float(np.min(fields.norm_grad_h[band]))
    if l_est < L_FLOOR:
        raise OracleError(
            f"min |grad h| over the band is {l_est:.3g} < {L_FLOOR:g}; "
            "the barrier gradient vanishes near the safe-set boundary",
            assumption="gradient_floor",
        )
    sup_gj = float(np.max(fields.norm_grad_j[level_set]))

    bound = sup_gj / l_est
    if case == "B":
        if c is None or f_star is None:
            raise ValueError("case 'B' needs the decay rate c and the angle bound f_star")
        if not f_star < 1.0:
            raise OracleError(
                f"angle bound f*={f_star:.6g} is not below 1", assumption="angle_condition"
            )
        f_tilde = 1.0 - f_star * f_star
        bound = max(bound, c * abs(rho) / (l_est * l_est * f_tilde))
    alpha = headroom * bound if bound > 0.0 else 1.0

    logger.info(
        "alpha=%.6g (case %s): L=%.6g, sup|grad J|=%.6g over %d samples (%d in band)",
        alpha, case, l_est, sup_gj, int(level_set.sum()), int(band.sum()),
    )
    return AlphaSelection(
        alpha=alpha,
        l_estimate=l_est,
        sup_grad_j=sup_gj,
        rho=float(rho),
        sample_count=int(level_set.sum()),
        case=case,
        band_count=int(band.sum()),
        resolution=fields.spacing,
        f_star=f_star,
        lower_bound=bound,
    )


def check_alpha(selection: AlphaSelection, alpha: Optional[float] = None) -> CheckResult:
    """α·L > sup‖∇J‖ for the selected α, or for a user-supplied one."""
    value = selection.alpha if alpha is None else float(alpha)
    margin = value * selection.l_estimate - selection.sup_grad_j
    strict = margin > 0.0 or (selection.sup_grad_j == 0.0 and value > 0.0)
    if selection.case == "B":
        strict = strict and value > selection.lower_bound
    return CheckResult(
        name="alpha",
        passed=bool(strict),
        margin=margin,
        worst_location=None,
        details={
            "alpha": value,
            "l_estimate": selection.l_estimate,
            "sup_grad_j": selection.sup_grad_j,
            "rho": selection.rho,
            "case": selection.case,
            "sample_count": selection.sample_count,
            "band_count": selection.band_count,
            "resolution": selection.resolution,
        },
    )


@dataclass(frozen=True, eq=False)
class AngleCondition:
    """Largest sampled cosine between ∇J and ∇h on the band away from θ*_c."""

    f_star_estimate: float
    violations: np.ndarray
    sample_count: int
    worst_location: Optional[np.ndarray] = None
    margin: float = field(default=0.0)

    @property
    def ok(self) -> bool:
        return self.f_star_estimate < 1.0 and self.violations.shape[0] == 0


def check_angle_condition(
    maps: MapPair,
    rho: float,
    r_star: float,
    box: BoxSpec,
    minimizer: MinimizerEstimate,
    count: int = 400,
    *,
    collinear_tol: float = 1e-9,
) -> AngleCondition:
    """
    f* estimate over samples with ρ ≤ h ≤ 0 and ‖θ − θ*_c‖ ≥ r*.

    Samples where either gradient vanishes carry no direction and are skipped.
    ``violations`` lists the samples whose cosine is within ``collinear_tol`` of 1.
    """
    fields = _grid_fields(maps, box, count)
    dist = np.linalg.norm(fields.points - minimizer.theta_star, axis=1)
    nj = fields.norm_grad_j
    nh = fields.norm_grad_h
    region = (fields.h >= rho) & (fields.h <= 0.0) & (dist >= r_star) & (nj > 0.0) & (nh > 0.0)
    if not region.any():
        raise OracleError(
            f"no grid samples with {rho} <= h <= 0 at distance >= {r_star} from the minimizer",
            assumption="nonempty_band",
        )
    cos = np.sum(fields.grad_j[region] * fields.grad_h[region], axis=1) / (nj[region] * nh[region])
    idx = int(np.argmax(cos))
    f_star = float(cos[idx])
    pts = fields.points[region]
    violations = pts[cos >= 1.0 - collinear_tol]
    logger.info("angle condition: f* ~ %.6g over %d samples", f_star, int(region.sum()))
    return AngleCondition(
        f_star_estimate=f_star,
        violations=violations,
        sample_count=int(region.sum()),
        worst_location=pts[idx],
        margin=1.0 - f_star,
    )


def angle_check_result(angle: AngleCondition, rho: float, r_star: float) -> CheckResult:
    return CheckResult(
        name="angle",
        passed=angle.ok,
        margin=angle.margin,
        worst_location=angle.worst_location,
        details={
            "f_star_estimate": angle.f_star_estimate,
            "violations": int(angle.violations.shape[0]),
            "sample_count": angle.sample_count,
            "rho": rho,
            "r_star": r_star,
        },
    )


# ---------------------------------------------------------------------------
# Trajectory checks
# ---------------------------------------------------------------------------


def barrier_rate_margin(
    theta: ArrayLike, maps: MapPair, c: float, m_plus: float
) -> Union[float, np.ndarray]:
    """∇h(θ)ᵀF(θ) + c·h(θ), non-negative wherever the M⁺ clamp is inactive."""
    rate = np.asarray(hdot_along_flow(theta, maps, c, m_plus))
    value = rate + c * np.asarray(maps.barrier(theta))
    return float(value) if value.ndim == 0 else value


def _h_column(traj: Trajectory, maps: Optional[MapPair], column: str = "h") -> np.ndarray:
    if column in traj.derived:
        return np.asarray(traj.derived[column])
    if maps is None:
        raise ValueError(f"trajectory has no {column!r} column; annotate it or pass maps")
    return np.asarray(maps.barrier(traj.theta_hat), dtype=float)


def _clamp_saturated(theta: np.ndarray, maps: MapPair, c: float, m_plus: float) -> np.ndarray:
    sample = maps.sample(theta)
    drive = np.sum(sample.grad_j * sample.grad_h, axis=-1) - c * np.asarray(sample.h)
    norm2 = np.sum(sample.grad_h * sample.grad_h, axis=-1)
    return (drive > 0.0) & (norm2 * m_plus < 1.0)


def check_invariance(
    traj: Trajectory,
    c: float,
    tol: float,
    *,
    maps: Optional[MapPair] = None,
    m_plus: Optional[float] = None,
) -> CheckResult:
    """
    ḣ + c·h ≥ −tol between samples and h(t) ≥ h(t₀)·e^{−c(t−t₀)} − tol.

    ḣ is the finite difference of consecutive h samples, paired with their
    midpoint value. With ``maps`` and ``m_plus`` given, samples where the M⁺
    clamp is saturated (the filter is weaker than the unclamped flow) are
    left out of the rate test and the exponential bound restarts after the
    last saturated sample.
    """
    if traj.system != "exact":
        raise ValueError("check_invariance expects an exact-flow trajectory")
    if traj.n_samples < 2:
        raise ValueError("trajectory too short: need at least 2 samples")
    t = traj.times
    h = _h_column(traj, maps)

    saturated = np.zeros(t.shape[0], dtype=bool)
    if maps is not None and m_plus is not None:
        saturated = _clamp_saturated(traj.theta_hat, maps, c, m_plus)

    hdot = np.diff(h) / np.diff(t)
    rate = hdot + c * 0.5 * (h[:-1] + h[1:])
    usable = ~(saturated[:-1] | saturated[1:])
    if usable.any():
        rate_idx = int(np.argmin(np.where(usable, rate, np.inf)))
        rate_margin = float(rate[rate_idx]) + tol
        rate_at = float(t[rate_idx])
    else:
        rate_margin, rate_at = math.inf, float(t[0])

    start = int(np.flatnonzero(saturated)[-1]) + 1 if saturated.any() else 0
    if start < t.shape[0]:
        bound = h[start] * np.exp(-c * (t[start:] - t[start]))
        gap = h[start:] - bound
        bound_idx = int(np.argmin(gap))
        bound_margin = float(gap[bound_idx]) + tol
        bound_at = float(t[start + bound_idx])
    else:
        bound_margin, bound_at = math.inf, float(t[-1])

    margin = min(rate_margin, bound_margin)
    worst_at = rate_at if rate_margin <= bound_margin else bound_at
    return CheckResult(
        name="invariance",
        passed=margin >= 0.0,
        margin=margin,
        worst_location=worst_at,
        details={
            "rate_margin": rate_margin if math.isfinite(rate_margin) else None,
            "bound_margin": bound_margin if math.isfinite(bound_margin) else None,
            "saturated_samples": int(saturated.sum()),
            "bound_start_time": float(t[min(start, t.shape[0] - 1)]),
            "tol": tol,
        },
    )


def check_lyapunov_decrease(
    traj: Trajectory,
    maps: MapPair,
    minimizer: MinimizerEstimate,
    alpha: float,
    exclusion_radius: float,
    tol: float,
) -> CheckResult:
    """
    ΔV ≤ tol between samples whose start lies outside B_r(θ*_c), and ΔV < 0
    when the start lies outside B_2r(θ*_c).
    """
    if traj.system != "exact":
        raise ValueError("check_lyapunov_decrease expects an exact-flow trajectory")
    theta = traj.theta_hat
    v = (
        np.asarray(traj.derived["V"])
        if "V" in traj.derived
        else np.asarray(lyapunov_v(theta, maps, minimizer, alpha), dtype=float)
    )
    if v.shape[0] < 2:
        return CheckResult(name="lyapunov", passed=True, margin=None, details={"pairs": 0})
    dv = np.diff(v)
    dist = np.linalg.norm(theta[:-1] - minimizer.theta_star, axis=1)
    outer = dist > exclusion_radius
    strict = dist > 2.0 * exclusion_radius

    margin = math.inf
    worst_at: Optional[float] = None
    if outer.any():
        slack = np.where(outer, tol - dv, np.inf)
        i = int(np.argmin(slack))
        margin, worst_at = float(slack[i]), float(traj.times[i])
    strict_ok = True
    if strict.any():
        slack = np.where(strict, -dv, np.inf)
        i = int(np.argmin(slack))
        strict_ok = bool(slack[i] > 0.0)
        if slack[i] < margin:
            margin, worst_at = float(slack[i]), float(traj.times[i])
    passed = (not outer.any() or margin >= 0.0) and strict_ok
    return CheckResult(
        name="lyapunov",
        passed=passed,
        margin=margin,
        worst_location=worst_at,
        details={
            "alpha": alpha,
            "exclusion_radius": exclusion_radius,
            "tol": tol,
            "pairs_checked": int(outer.sum()),
            "strict_pairs": int(strict.sum()),
        },
    )


def check_practical_safety(
    traj: Trajectory,
    cfg: EsConfig,
    delta: float,
    transient: float,
    *,
    maps: Optional[MapPair] = None,
) -> CheckResult:
    """
    h(θ(t)) ≥ h(θ(t₀))·e^{−c·k·ω_f·(t−t₀)} − δ for t ≥ transient, θ = θ̂ + S(t).
    """
    if traj.system != "es":
        raise ValueError("check_practical_safety expects an ES trajectory")
    t = traj.times
    if "h" in traj.derived:
        h = np.asarray(traj.derived["h"])
    elif maps is not None:
        h = np.asarray(maps.barrier(traj.theta_hat + dither_s(t[:, None], cfg)), dtype=float)
    else:
        raise ValueError("trajectory has no 'h' column; annotate it or pass maps")
    late = t >= transient
    if not late.any():
        return CheckResult(
            name="practical_safety",
            passed=True,
            margin=None,
            details={"delta": delta, "transient": transient, "samples_checked": 0},
        )
    bound = h[0] * np.exp(-cfg.closed_loop_rate * (t - t[0])) - delta
    gap = np.where(late, h - bound, np.inf)
    i = int(np.argmin(gap))
    margin = float(gap[i])
    return CheckResult(
        name="practical_safety",
        passed=bool(margin >= 0.0),
        margin=margin,
        worst_location=float(t[i]),
        details={"delta": delta, "transient": transient, "samples_checked": int(late.sum())},
    )


def check_safe_set_retention(
    traj: Trajectory,
    enter_level: float = 0.05,
    floor: float = -0.02,
    *,
    maps: Optional[MapPair] = None,
) -> CheckResult:
    """Once h(θ̂) ≥ enter_level, h(θ̂) stays ≥ floor for the rest of the run."""
    column = "h_hat" if traj.system == "es" else "h"
    h = _h_column(traj, maps, column)
    entered = np.flatnonzero(h >= enter_level)
    if entered.size == 0:
        return CheckResult(
            name="retention",
            passed=True,
            margin=None,
            details={"entered": False, "enter_level": enter_level, "floor": floor},
        )
    first = int(entered[0])
    tail = h[first:]
    i = int(np.argmin(tail))
    margin = float(tail[i] - floor)
    return CheckResult(
        name="retention",
        passed=margin >= 0.0,
        margin=margin,
        worst_location=float(traj.times[first + i]),
        details={
            "entered": True,
            "entered_at": float(traj.times[first]),
            "enter_level": enter_level,
            "floor": floor,
        },
    )


def estimator_error(state: Union[EsState, np.ndarray], maps: MapPair) -> np.ndarray:
    """
    [G_J − ∇J(θ̂); η_J − J(θ̂); G_h − ∇h(θ̂); η_h − h(θ̂)], length 2n+2.

    Accepts an `EsState` or flat ES state(s), with an optional batch axis.
    """
    if not isinstance(state, EsState):
        state = EsState.from_vector(state, maps.dim)
    sample = maps.sample(state.theta_hat)
    return np.concatenate(
        [
            np.asarray(state.g_j) - sample.grad_j,
            (np.asarray(state.eta_j) - np.asarray(sample.j))[..., None],
            np.asarray(state.g_h) - sample.grad_h,
            (np.asarray(state.eta_h) - np.asarray(sample.h))[..., None],
        ],
        axis=-1,
    )


def check_estimator_decay(
    traj: Trajectory,
    cfg: EsConfig,
    maps: MapPair,
    transient: float,
    *,
    floor: Optional[float] = None,
) -> CheckResult:
    """
    ‖e(t)‖ below max(0.5, 5·a·Ḡ) for t ≥ transient, Ḡ the largest gradient norm
    of J or h at θ̂ along the run.
    """
    if traj.system != "es":
        raise ValueError("check_estimator_decay expects an ES trajectory")
    err = np.linalg.norm(estimator_error(traj.states, maps), axis=1)
    sample = maps.sample(traj.theta_hat)
    g_bar = float(
        max(np.max(np.linalg.norm(sample.grad_j, axis=1)), np.max(np.linalg.norm(sample.grad_h, axis=1)))
    )
    level = max(0.5, 5.0 * cfg.a * g_bar) if floor is None else float(floor)
    t = traj.times
    late = t >= transient
    early = t < 1.0 / cfg.omega_f
    peak_early = float(np.max(err[early])) if early.any() else float(err[0])
    if not late.any():
        return CheckResult(
            name="estimator",
            passed=True,
            margin=None,
            details={"floor": level, "g_bar": g_bar, "samples_checked": 0},
        )
    tail = np.where(late, err, -np.inf)
    i = int(np.argmax(tail))
    margin = level - float(tail[i])
    return CheckResult(
        name="estimator",
        passed=margin > 0.0,
        margin=margin,
        worst_location=float(t[i]),
        details={
            "floor": level,
            "g_bar": g_bar,
            "transient_peak": peak_early,
            "transient_exceeds_floor": peak_early > level,
            "samples_checked": int(late.sum()),
        },
    )


def check_reduction_equivalence(
    es_traj: Trajectory,
    exact_traj: Trajectory,
    factor: float,
    tol: float = 0.15,
) -> CheckResult:
    """
    sup_t ‖θ̂(t) − θ_exact(factor·t)‖ ≤ tol over the common horizon.

    The exact trajectory is linearly interpolated between its samples at the
    rescaled ES sample times.
    """
    if es_traj.system != "es" or exact_traj.system != "exact":
        raise ValueError("need an ES trajectory and an exact-flow trajectory")
    t_mapped = es_traj.times * float(factor)
    common = t_mapped <= exact_traj.times[-1] + 1e-12
    if not common.any():
        raise ValueError("trajectories have no common horizon")
    t_common = np.minimum(t_mapped[common], exact_traj.times[-1])
    ref = np.stack(
        [np.interp(t_common, exact_traj.times, exact_traj.theta_hat[:, i]) for i in range(exact_traj.dim)],
        axis=1,
    )
    dist = np.linalg.norm(es_traj.theta_hat[common] - ref, axis=1)
    i = int(np.argmax(dist))
    return CheckResult(
        name="reduction",
        passed=bool(dist[i] <= tol),
        margin=tol - float(dist[i]),
        worst_location=float(es_traj.times[common][i]),
        details={"factor": float(factor), "tol": tol, "samples_compared": int(common.sum())},
    )


def check_convergence(traj: Trajectory, minimizer: MinimizerEstimate, radius: float) -> CheckResult:
    """Final θ̂ (θ for exact runs) within ``radius`` of θ*_c."""
    final = traj.theta_hat[-1]
    dist = float(np.linalg.norm(final - minimizer.theta_star))
    return CheckResult(
        name="convergence",
        passed=dist <= radius,
        margin=radius - dist,
        worst_location=final,
        details={"final_distance": dist, "radius": radius},
    )


def combine_checks(name: str, results: Sequence[CheckResult]) -> CheckResult:
    """
    Fold per-run results of one check into a single entry.

    The combined margin is the worst run margin; ``worst_location`` names
    the run it came from.
    """
    if not results:
        return CheckResult(name=name, passed=True, margin=None, details={"runs": 0})
    worst_run = None
    worst_margin = math.inf
    for i, res in enumerate(results):
        if res.margin is not None and res.margin < worst_margin:
            worst_margin, worst_run = res.margin, i
    failed = [i for i, res in enumerate(results) if not res.passed]
    if failed and (worst_run is None or results[worst_run].passed):
        worst_run = failed[0]
    location = None
    if worst_run is not None:
        location = {"run": worst_run, "at": results[worst_run].worst_location}
    return CheckResult(
        name=name,
        passed=not failed,
        margin=worst_margin if math.isfinite(worst_margin) else None,
        worst_location=location,
        details={"runs": len(results), "failed_runs": failed},
    )


# ---------------------------------------------------------------------------
# Disturbance gain and assumption probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DisturbanceGain:
    """Empirical K in ‖F(Q + w) − F(Q)‖ ≤ K·‖w‖; ``per_eps`` maps ε to max ratio."""

    k_estimate: float
    per_eps: Dict[float, float]
    samples: int


def estimate_disturbance_gain(
    maps: MapPair,
    c: float,
    m_plus: float,
    box: BoxSpec,
    eps: Sequence[float] = (1e-1, 1e-2, 1e-3),
    samples: int = 200,
    seed: int = 0,
) -> DisturbanceGain:
    """Sample θ in ``box`` and random directions w of norm ε; K is the largest observed ratio."""
    rng = np.random.default_rng(seed)
    n = maps.dim
    lower = np.asarray(box.lower, dtype=float)
    upper = np.asarray(box.upper, dtype=float)
    theta = lower + (upper - lower) * rng.random((int(samples), n))
    base = exact_rhs(theta, maps, c, m_plus)
    per_eps: Dict[float, float] = {}
    for e in eps:
        dirs = rng.standard_normal((int(samples), 2 * n + 1))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ratios = np.empty(int(samples))
        for s in range(int(samples)):
            w = Disturbance.from_vector(e * dirs[s], n)
            moved = disturbed_rhs(theta[s], w, maps, c, m_plus)
            ratios[s] = np.linalg.norm(moved - base[s]) / e
        per_eps[float(e)] = float(np.max(ratios))
    k_est = max(per_eps.values())
    logger.info("disturbance gain K ~ %.6g over %d samples", k_est, samples)
    return DisturbanceGain(k_estimate=k_est, per_eps=per_eps, samples=int(samples))


def probe_assumptions(
    maps: MapPair,
    box: BoxSpec,
    minimizer: MinimizerEstimate,
    *,
    alpha: Optional[float] = None,
    count: int = 200,
    radius: float = 0.25,
    stationary_tol: float = 1e-2,
) -> List[CheckResult]:
    """
    Best-effort grid probes of the structural assumptions behind the certificates.

    - ``assumption_safe_set``: some sample has h ≥ 0.
    - ``assumption_stationary``: no sample in C outside B_radius(θ*_c) has ‖∇J‖ ≤ stationary_tol.
    - ``assumption_collinearity``: no boundary sample outside B_radius(θ*_c) has
      ∇J and ∇h pointing the same way (residual ≤ `COLLINEARITY_TOL`).
    - ``assumption_positive_definite`` (with ``alpha``): V > 0 outside B_radius(θ*_c).
    """
    fields = _grid_fields(maps, box, count)
    dist = np.linalg.norm(fields.points - minimizer.theta_star, axis=1)
    away = dist > radius
    safe = fields.h >= 0.0
    results: List[CheckResult] = [
        CheckResult(
            name="assumption_safe_set",
            passed=bool(safe.any()),
            margin=float(np.max(fields.h)),
            worst_location=fields.points[int(np.argmax(fields.h))],
            details={"safe_samples": int(safe.sum()), "samples": int(fields.h.size)},
        )
    ]

    nj = fields.norm_grad_j
    candidates = safe & away & (nj <= stationary_tol)
    results.append(
        CheckResult(
            name="assumption_stationary",
            passed=not candidates.any(),
            margin=float(np.min(np.where(safe & away, nj, np.inf)) - stationary_tol)
            if (safe & away).any()
            else None,
            worst_location=fields.points[candidates][0] if candidates.any() else None,
            details={"candidates": int(candidates.sum()), "stationary_tol": stationary_tol},
        )
    )

    nh = fields.norm_grad_h
    near_boundary = np.abs(fields.h) <= 0.5 * fields.spacing * np.maximum(nh, 1e-12)
    valid = near_boundary & away & (nj > 0.0) & (nh > 0.0)
    cos = np.full(fields.h.shape, -np.inf)
    cos[valid] = np.sum(fields.grad_j[valid] * fields.grad_h[valid], axis=1) / (nj[valid] * nh[valid])
    collinear = valid & (cos >= 1.0 - COLLINEARITY_TOL)
    results.append(
        CheckResult(
            name="assumption_collinearity",
            passed=not collinear.any(),
            margin=float(1.0 - COLLINEARITY_TOL - np.max(cos[valid])) if valid.any() else None,
            worst_location=fields.points[int(np.argmax(cos))] if valid.any() else None,
            details={"boundary_samples": int(near_boundary.sum()), "collinear": int(collinear.sum())},
        )
    )

    if alpha is not None:
        v = lyapunov_v(fields.points, maps, minimizer, alpha)
        v_away = np.where(away, v, np.inf)
        i = int(np.argmin(v_away))
        results.append(
            CheckResult(
                name="assumption_positive_definite",
                passed=bool(v_away[i] > 0.0),
                margin=float(v_away[i]),
                worst_location=fields.points[i],
                details={"alpha": alpha, "radius": radius},
            )
        )
    for res in results:
        logger.info("probe %s: %s", res.name, "pass" if res.passed else "FAIL")
    return results
