from __future__ import annotations

"""
Vector fields of the safe extremum-seeking loop and its exact counterpart.

ES loop (state dimension 3n+2), with θ = θ̂ + S(t)::

    dθ̂/dt   = k·ω_f·(−G_J + A(G_J, G_h, η_h)·G_h)
    dG_J/dt = −ω_f·(G_J − (J(θ) − η_J)·M(t))
    dη_J/dt = −ω_f·(η_J − J(θ))
    dG_h/dt = −ω_f·(G_h − (h(θ) − η_h)·M(t))
    dη_h/dt = −ω_f·(η_h − h(θ))

    S(t) = a·sin(ω_i t),  M(t) = (2/a)·sin(ω_i t)
    A    = min{‖G_h‖⁻², M⁺}·max{G_Jᵀ G_h − c·η_h, 0}

Exact (safety-filtered gradient) flow::

    F(θ) = −∇J + ∇h·min{‖∇h‖⁻², M⁺}·max{∇Jᵀ∇h − c·h, 0}

Every function accepts a single state or a batch with a leading axis; the
``*_vector_field`` factories return ``f(t, x)`` callables on flat arrays for
the integrator.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .expr import MapPair
from .validators import EsConfig

logger = logging.getLogger(__name__)

__all__ = [
    "VectorField",
    "EsState",
    "Disturbance",
    "dither_s",
    "dither_m",
    "safety_gain",
    "filtered_flow",
    "es_rhs",
    "es_vector_field",
    "exact_rhs",
    "exact_vector_field",
    "disturbed_rhs",
    "hdot_along_flow",
    "es_state_dim",
]

VectorField = Callable[[float, np.ndarray], np.ndarray]
ArrayLike = Union[Sequence[float], np.ndarray]


def es_state_dim(n: int) -> int:
    return 3 * n + 2


# ---------------------------------------------------------------------------
# State containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EsState:
    """
    Controller state (θ̂, G_J, η_J, G_h, η_h).

    Flattened layout is ``[θ̂ (n), G_J (n), η_J, G_h (n), η_h]``; the same
    layout is used for derivatives. Fields may carry a leading batch axis.
    """

    theta_hat: np.ndarray
    g_j: np.ndarray
    eta_j: Union[float, np.ndarray]
    g_h: np.ndarray
    eta_h: Union[float, np.ndarray]

    @property
    def dim(self) -> int:
        return int(np.shape(self.theta_hat)[-1])

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                np.asarray(self.theta_hat, dtype=float),
                np.asarray(self.g_j, dtype=float),
                np.asarray(self.eta_j, dtype=float)[..., None],
                np.asarray(self.g_h, dtype=float),
                np.asarray(self.eta_h, dtype=float)[..., None],
            ],
            axis=-1,
        )

    @classmethod
    def from_vector(cls, x: ArrayLike, n: int) -> "EsState":
        arr = np.asarray(x, dtype=float)
        if arr.shape[-1] != es_state_dim(n):
            raise ValueError(f"ES state must have 3n+2={es_state_dim(n)} entries, got {arr.shape[-1]}")
        theta_hat, g_j, eta_j, g_h, eta_h = _split(arr, n)
        return cls(theta_hat, g_j, eta_j, g_h, eta_h)

    @classmethod
    def initial(cls, theta_hat: ArrayLike, estimator_init: Optional[ArrayLike] = None) -> "EsState":
        """θ̂(0) with the estimator stack (G_J, η_J, G_h, η_h) set to ``estimator_init`` (zeros by default)."""
        th = np.asarray(theta_hat, dtype=float)
        n = th.shape[-1]
        est = np.zeros(2 * n + 2) if estimator_init is None else np.asarray(estimator_init, float)
        if est.shape[-1] != 2 * n + 2:
            raise ValueError(f"estimator_init must have 2n+2={2 * n + 2} entries")
        return cls.from_vector(np.concatenate([th, est], axis=-1), n)


def _split(x: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return (
        x[..., :n],
        x[..., n : 2 * n],
        x[..., 2 * n],
        x[..., 2 * n + 1 : 3 * n + 1],
        x[..., 3 * n + 1],
    )


@dataclass(frozen=True)
class Disturbance:
    """Additive error w = (w₁, w₂, w₃) on the estimates (∇J, ∇h, h)."""

    w1: np.ndarray
    w2: np.ndarray
    w3: float

    def __post_init__(self) -> None:
        for label, value in (("w1", self.w1), ("w2", self.w2), ("w3", self.w3)):
            if not np.all(np.isfinite(value)):
                raise ValueError(f"disturbance component {label} must be finite")
        if np.shape(self.w1) != np.shape(self.w2):
            raise ValueError("w1 and w2 must have the same length")

    @classmethod
    def zeros(cls, n: int) -> "Disturbance":
        return cls(np.zeros(n), np.zeros(n), 0.0)

    @classmethod
    def from_vector(cls, w: ArrayLike, n: int) -> "Disturbance":
        arr = np.asarray(w, dtype=float)
        if arr.shape != (2 * n + 1,):
            raise ValueError(f"stacked disturbance must have 2n+1={2 * n + 1} entries")
        return cls(arr[:n].copy(), arr[n : 2 * n].copy(), float(arr[2 * n]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1, self.w2, [self.w3]])

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_vector()))


# ---------------------------------------------------------------------------
# Signals and the safety term
# ---------------------------------------------------------------------------


def dither_s(t: float, cfg: EsConfig) -> np.ndarray:
    """Perturbation S(t) = a·sin(ω_i t)."""
    return cfg.a * np.sin(cfg.omega_array * t)


def dither_m(t: float, cfg: EsConfig) -> np.ndarray:
    """Demodulation M(t) = (2/a)·sin(ω_i t)."""
    return (2.0 / cfg.a) * np.sin(cfg.omega_array * t)


def safety_gain(
    g_j: ArrayLike,
    g_h: ArrayLike,
    eta_h: Union[float, np.ndarray],
    c: float,
    m_plus: float,
) -> Union[float, np.ndarray]:
    """
    A = min{‖g_h‖⁻², M⁺} · max{g_jᵀg_h − c·η_h, 0}.

    When the max term is zero the result is 0 whatever ‖g_h‖ is, and the
    reciprocal is only formed where ‖g_h‖⁻² < M⁺, so g_h = 0 never divides.
    Returns a float for unbatched input.
    """
    gj = np.asarray(g_j, dtype=float)
    gh = np.asarray(g_h, dtype=float)
    drive = np.sum(gj * gh, axis=-1) - c * np.asarray(eta_h, dtype=float)
    norm2 = np.sum(gh * gh, axis=-1)
    unclamped = norm2 * m_plus > 1.0
    clamp = np.divide(
        1.0, norm2, out=np.full(np.shape(norm2), float(m_plus)), where=unclamped
    )
    gain = np.where(drive > 0.0, clamp * drive, 0.0)
    if gain.ndim == 0:
        return float(gain)
    return gain


def filtered_flow(
    grad_j: np.ndarray,
    grad_h: np.ndarray,
    h: Union[float, np.ndarray],
    c: float,
    m_plus: float,
) -> np.ndarray:
    """−∇J + A(∇J, ∇h, h)·∇h, the common core of the ES, exact and disturbed fields."""
    gain = np.asarray(safety_gain(grad_j, grad_h, h, c, m_plus))
    return -np.asarray(grad_j, dtype=float) + gain[..., None] * np.asarray(grad_h, dtype=float)


# ---------------------------------------------------------------------------
# ES loop
# ---------------------------------------------------------------------------


def es_vector_field(cfg: EsConfig, maps: MapPair) -> VectorField:
    """
    Flat right-hand side ``f(t, x)`` of the ES loop for ``x`` of shape ``(3n+2,)`` or ``(B, 3n+2)``.
    """
    n = maps.dim
    if cfg.dim != n:
        raise ValueError(f"cfg has {cfg.dim} dither frequencies but maps have dim={n}")
    k_rate = cfg.k * cfg.omega_f
    wf = cfg.omega_f

    def field(t: float, x: np.ndarray) -> np.ndarray:
        theta_hat, g_j, eta_j, g_h, eta_h = _split(x, n)
        s = dither_s(t, cfg)
        m = dither_m(t, cfg)
        theta = theta_hat + s
        j = np.asarray(maps.objective(theta))
        h = np.asarray(maps.barrier(theta))
        d_theta = k_rate * filtered_flow(g_j, g_h, eta_h, cfg.c, cfg.m_plus)
        d_g_j = -wf * (g_j - (j - eta_j)[..., None] * m)
        d_eta_j = -wf * (eta_j - j)
        d_g_h = -wf * (g_h - (h - eta_h)[..., None] * m)
        d_eta_h = -wf * (eta_h - h)
        return np.concatenate(
            [d_theta, d_g_j, d_eta_j[..., None], d_g_h, d_eta_h[..., None]], axis=-1
        )

    return field


def es_rhs(state: EsState, t: float, cfg: EsConfig, maps: MapPair) -> EsState:
    """Time derivative of the ES state, in the same layout as ``state``."""
    x = state.to_vector()
    return EsState.from_vector(es_vector_field(cfg, maps)(t, x), maps.dim)


# ---------------------------------------------------------------------------
# Exact and disturbed flows
# ---------------------------------------------------------------------------


def exact_rhs(theta: ArrayLike, maps: MapPair, c: float, m_plus: float) -> np.ndarray:
    """F(θ) for θ of shape ``(n,)`` or ``(B, n)``."""
    sample = maps.sample(theta)
    return filtered_flow(sample.grad_j, sample.grad_h, sample.h, c, m_plus)


def exact_vector_field(maps: MapPair, c: float, m_plus: float) -> VectorField:
    def field(t: float, x: np.ndarray) -> np.ndarray:
        return exact_rhs(x, maps, c, m_plus)

    return field


def disturbed_rhs(
    theta: ArrayLike, w: Disturbance, maps: MapPair, c: float, m_plus: float
) -> np.ndarray:
    """F evaluated at Q(θ) + w, i.e. with (∇J, ∇h, h) replaced by (∇J+w₁, ∇h+w₂, h+w₃)."""
    sample = maps.sample(theta)
    return filtered_flow(
        sample.grad_j + w.w1,
        sample.grad_h + w.w2,
        np.asarray(sample.h) + w.w3,
        c,
        m_plus,
    )


def hdot_along_flow(
    theta: ArrayLike, maps: MapPair, c: float, m_plus: float
) -> Union[float, np.ndarray]:
    """
    ∇h(θ)ᵀF(θ), the analytic rate of h along the exact flow.

    With the clamp inactive, ḣ + c·h ≥ 0 holds pointwise.
    """
    sample = maps.sample(theta)
    flow = filtered_flow(sample.grad_j, sample.grad_h, sample.h, c, m_plus)
    rate = np.sum(sample.grad_h * flow, axis=-1)
    return float(rate) if np.ndim(rate) == 0 else rate
