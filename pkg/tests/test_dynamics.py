"""
Tests for safees.core.dynamics

Covers the dither signals, the safety gain A, the ES right-hand side, the
exact safety-filtered flow and its disturbed variant.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from safees.core.dynamics import (
    Disturbance,
    EsState,
    disturbed_rhs,
    dither_m,
    dither_s,
    es_rhs,
    es_state_dim,
    es_vector_field,
    exact_rhs,
    hdot_along_flow,
    safety_gain,
)
from safees.core.expr import MapPair
from safees.core.validators import EsConfig
from safees.scenarios import REFERENCE_H


# ---------------------------------------------------------------------------
# Dither signals
# ---------------------------------------------------------------------------


def test_dithers_vanish_at_time_zero(es_cfg):
    assert np.array_equal(dither_s(0.0, es_cfg), [0.0, 0.0])
    assert np.array_equal(dither_m(0.0, es_cfg), [0.0, 0.0])


def test_dither_values_at_quarter_period(es_cfg):
    s = dither_s(math.pi / 20, es_cfg)
    assert s == pytest.approx([0.1, 0.1 * math.sin(13 * math.pi / 20)], rel=1e-14)


def test_demodulation_is_scaled_perturbation(es_cfg):
    for t in np.linspace(0.0, 3.0, 31):
        assert np.allclose(dither_m(t, es_cfg), (2.0 / es_cfg.a**2) * dither_s(t, es_cfg))


def test_dither_bounds(es_cfg):
    ts = np.linspace(0.0, 10.0, 2001)
    s = np.array([dither_s(t, es_cfg) for t in ts])
    m = np.array([dither_m(t, es_cfg) for t in ts])
    assert np.all(np.linalg.norm(s, axis=1) <= es_cfg.a * math.sqrt(2) + 1e-15)
    assert np.max(np.abs(m)) == pytest.approx(20.0, rel=1e-3)


# ---------------------------------------------------------------------------
# Safety gain
# ---------------------------------------------------------------------------


def test_gain_is_zero_when_drive_is_inactive():
    assert safety_gain([1.0, 0.0], [-1.0, 0.0], 0.5, 1.0, 1e4) == 0.0
    # no division for a vanishing g_h either
    assert safety_gain([0.0, 0.0], [0.0, 0.0], 0.5, 1.0, 1e4) == 0.0


def test_gain_clamps_at_m_plus_for_vanishing_g_h():
    c, eta_h, m_plus = 2.0, -0.5, 1e4
    assert safety_gain([1.0, 0.0], [0.0, 0.0], eta_h, c, m_plus) == pytest.approx(
        m_plus * (-c * eta_h)
    )


def test_gain_unit_example():
    assert safety_gain([1.0, 0.0], [1.0, 0.0], 0.0, 1.0, 1e4) == pytest.approx(1.0)


def test_gain_times_norm_squared_bounded_by_drive():
    rng = np.random.default_rng(5)
    g_j = rng.normal(size=(500, 2))
    g_h = rng.normal(size=(500, 2)) * rng.choice([1e-3, 1.0], size=(500, 1))
    eta_h = rng.normal(size=500)
    c, m_plus = 1.5, 1e4
    gain = safety_gain(g_j, g_h, eta_h, c, m_plus)
    norm2 = np.sum(g_h * g_h, axis=1)
    drive = np.maximum(np.sum(g_j * g_h, axis=1) - c * eta_h, 0.0)
    lhs = gain * norm2
    assert np.all(lhs <= drive * (1 + 1e-12) + 1e-15)
    unclamped = 1.0 / norm2 <= m_plus
    assert np.allclose(lhs[unclamped], drive[unclamped], rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------------------
# ES loop
# ---------------------------------------------------------------------------


def test_state_layout_round_trip():
    state = EsState(
        theta_hat=np.array([1.0, 2.0]),
        g_j=np.array([3.0, 4.0]),
        eta_j=5.0,
        g_h=np.array([6.0, 7.0]),
        eta_h=8.0,
    )
    x = state.to_vector()
    assert x.shape == (es_state_dim(2),) == (8,)
    assert np.array_equal(x, np.arange(1.0, 9.0))
    back = EsState.from_vector(x, 2)
    assert np.array_equal(back.g_h, [6.0, 7.0])
    assert float(back.eta_h) == 8.0


def test_state_rejects_wrong_width():
    with pytest.raises(ValueError):
        EsState.from_vector(np.zeros(7), 2)


def test_rhs_at_zero_state(es_cfg, maps):
    d = es_rhs(EsState.initial([0.0, 0.0]), 0.0, es_cfg, maps)
    h0 = 2 * math.exp(-1) - 0.5
    assert np.array_equal(d.theta_hat, [0.0, 0.0])
    assert np.array_equal(d.g_j, [0.0, 0.0])
    assert np.array_equal(d.g_h, [0.0, 0.0])
    assert float(d.eta_j) == pytest.approx(es_cfg.omega_f * 9.0)
    assert float(d.eta_h) == pytest.approx(es_cfg.omega_f * h0)
    assert float(d.eta_h) == pytest.approx(es_cfg.omega_f * maps.barrier([0.0, 0.0]))


@pytest.mark.parametrize("theta_hat", [[-1.0, 0.0], [0.5, -0.3], [-2.5, -0.5]])
def test_rhs_with_exact_estimates_reduces_to_exact_flow(es_cfg, maps, theta_hat):
    s = maps.sample(theta_hat)
    state = EsState(
        theta_hat=np.asarray(theta_hat),
        g_j=s.grad_j,
        eta_j=s.j,
        g_h=s.grad_h,
        eta_h=s.h,
    )
    d = es_rhs(state, 0.0, es_cfg, maps)
    expected = exact_rhs(theta_hat, maps, es_cfg.c, es_cfg.m_plus)
    assert np.allclose(d.theta_hat / (es_cfg.k * es_cfg.omega_f), expected, rtol=1e-12)


def test_doubling_k_only_scales_parameter_update(es_cfg, maps):
    x = np.array([-1.0, 0.2, 1.5, -0.3, 4.0, 0.2, 0.1, 0.3])
    f1 = es_vector_field(es_cfg, maps)(0.37, x)
    f2 = es_vector_field(es_cfg.model_copy(update={"k": 2 * es_cfg.k}), maps)(0.37, x)
    assert np.allclose(f2[:2], 2 * f1[:2], rtol=1e-14)
    assert np.array_equal(f2[2:], f1[2:])


def test_batched_field_matches_rows(es_cfg, maps):
    rng = np.random.default_rng(2)
    xs = rng.normal(size=(6, 8))
    f = es_vector_field(es_cfg, maps)
    batch = f(1.1, xs)
    for row, expected in zip(xs, batch):
        assert np.allclose(f(1.1, row), expected, rtol=1e-14)


def test_field_requires_matching_dimension(maps):
    cfg = EsConfig(k=1e-3, c=1.0, omega_f=10.0, m_plus=1e4, a=0.1, omegas=[10, 13, 17])
    with pytest.raises(ValueError):
        es_vector_field(cfg, maps)


def test_fields_are_finite_on_wide_box(es_cfg, maps):
    g = np.linspace(-10.0, 10.0, 41)
    pts = np.array([[x, y] for x in g for y in g])
    assert np.all(np.isfinite(exact_rhs(pts, maps, 3.0, 1e4)))
    states = np.hstack([pts, np.zeros((len(pts), 6))])
    assert np.all(np.isfinite(es_vector_field(es_cfg, maps)(0.3, states)))


# ---------------------------------------------------------------------------
# Exact and disturbed flows
# ---------------------------------------------------------------------------


def test_exact_flow_vanishes_at_interior_stationary_point():
    maps = MapPair.from_text("(x1-1)^2 + x2^2", REFERENCE_H, 2)
    assert maps.barrier([1.0, 0.0]) > 0
    assert np.allclose(exact_rhs([1.0, 0.0], maps, 1.0, 1e4), [0.0, 0.0])


def test_exact_flow_points_along_barrier_gradient_outside_safe_set(maps):
    theta = [-3.0, 0.0]
    gh = maps.barrier_grad(theta)
    assert np.linalg.norm(gh) > 0
    f = exact_rhs(theta, maps, 1.0, 1e4)
    cross = f[0] * gh[1] - f[1] * gh[0]
    assert abs(cross) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(gh) + 1e-300
    assert float(f @ gh) > 0
    h = maps.barrier(theta)
    assert f == pytest.approx(gh * (-h) / float(gh @ gh), rel=1e-10)


def test_exact_flow_is_gradient_descent_when_filter_inactive(maps):
    # ∇h(0,0) = 0 and h(0,0) > 0, so the drive is -c·h < 0
    assert np.allclose(exact_rhs([0.0, 0.0], maps, 1e-9, 1e4), -maps.objective_grad([0.0, 0.0]))


def test_barrier_rate_satisfies_decay_bound_where_unclamped(maps):
    rng = np.random.default_rng(9)
    pts = rng.uniform(-3.0, 3.0, size=(400, 2))
    c, m_plus = 3.0, 1e4
    grad_h = maps.barrier_grad(pts)
    unclamped = np.sum(grad_h * grad_h, axis=1) * m_plus >= 1.0
    margin = np.asarray(hdot_along_flow(pts, maps, c, m_plus)) + c * np.asarray(maps.barrier(pts))
    assert np.all(margin[unclamped] >= -1e-10)


def test_zero_disturbance_matches_exact_flow(maps):
    theta = [-1.5, 0.3]
    w = Disturbance.zeros(2)
    assert np.array_equal(disturbed_rhs(theta, w, maps, 1.0, 1e4), exact_rhs(theta, maps, 1.0, 1e4))


def test_small_disturbance_moves_flow_proportionally(maps):
    theta = [-1.5, 0.3]
    base = exact_rhs(theta, maps, 1.0, 1e4)
    direction = np.random.default_rng(4).normal(size=5)
    direction /= np.linalg.norm(direction)
    ratios = []
    for eps in (1e-1, 1e-2, 1e-3):
        w = Disturbance.from_vector(eps * direction, 2)
        ratios.append(np.linalg.norm(disturbed_rhs(theta, w, maps, 1.0, 1e4) - base) / eps)
    assert max(ratios) <= 3 * min(ratios)


def test_negative_barrier_disturbance_can_switch_filter_on():
    maps = MapPair.from_text("x1", "0.2 - x1", 1)
    theta = [0.0]
    assert np.allclose(exact_rhs(theta, maps, 1.0, 1e4), [-1.0])
    w = Disturbance(w1=np.zeros(1), w2=np.zeros(1), w3=-2.0)
    assert disturbed_rhs(theta, w, maps, 1.0, 1e4) == pytest.approx([-1.8])


def test_disturbance_must_be_finite():
    with pytest.raises(ValueError):
        Disturbance(w1=np.array([np.nan]), w2=np.zeros(1), w3=0.0)
    with pytest.raises(ValueError):
        Disturbance.from_vector([0.0, 0.0, 0.0, np.inf, 0.0], 2)


def test_disturbance_stacking():
    w = Disturbance.from_vector([1.0, 2.0, 3.0, 4.0, 5.0], 2)
    assert np.array_equal(w.w2, [3.0, 4.0])
    assert w.w3 == 5.0
    assert w.norm() == pytest.approx(math.sqrt(55.0))
