"""
Tests for safees.core.diagnostics

Grid oracles run on coarse grids here; the full-resolution runs live in
test_acceptance_slow.py. Trajectory checks are exercised both on short
exact-flow integrations and on hand-built trajectories with known verdicts.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from safees.core.diagnostics import (
    angle_check_result,
    barrier_rate_margin,
    check_alpha,
    check_angle_condition,
    check_convergence,
    check_estimator_decay,
    check_frequencies,
    check_gradients,
    check_invariance,
    check_lyapunov_decrease,
    check_minimizer,
    check_practical_safety,
    check_reduction_equivalence,
    check_safe_set_retention,
    combine_checks,
    estimate_disturbance_gain,
    estimator_error,
    lyapunov_v,
    lyapunov_v1,
    probe_assumptions,
    select_alpha,
    validate_frequencies,
)
from safees.core.dynamics import EsState, exact_vector_field
from safees.core.expr import MapPair
from safees.core.integrator import Trajectory, annotate_exact, integrate
from safees.core.minimizer import MinimizerEstimate, OracleError, find_constrained_minimizer
from safees.core.validators import BoxSpec, CheckResult, EsConfig, SimSpec

BOX = BoxSpec(lower=[-4.0, -4.0], upper=[4.0, 4.0])


@pytest.fixture(scope="module")
def ref_maps():
    return MapPair.from_text(
        "(x1+3)^2 + x2^2", "exp(-(x1-1)^2 - x2^2) + exp(-(x1+1)^2 - x2^2) - 0.5", 2
    )


@pytest.fixture(scope="module")
def star(ref_maps):
    return find_constrained_minimizer(ref_maps, BOX, coarse=200, refine_iters=6)


@pytest.fixture(scope="module")
def alpha_sel(ref_maps):
    return select_alpha(ref_maps, -0.25, BOX, count=200)


def _estimate_at(theta, j_star=0.0):
    return MinimizerEstimate(
        theta_star=np.asarray(theta, dtype=float),
        j_star=j_star,
        h_at_star=0.0,
        on_boundary=False,
        collinearity_residual=0.0,
    )


def _exact_run(maps, theta0, c=1.0, t_final=4.0):
    spec = SimSpec(dt=1e-3, t_final=t_final, sample_stride=20, system="exact")
    return annotate_exact(integrate(exact_vector_field(maps, c, 1e4), theta0, spec), maps)


# ---------------------------------------------------------------------------
# Frequencies
# ---------------------------------------------------------------------------


def test_reference_frequencies_pass():
    assert validate_frequencies([10, 13]).ok
    assert check_frequencies([10, 13]).passed


def test_equal_frequencies_violate():
    verdict = validate_frequencies([10, 10])
    assert not verdict.ok
    assert verdict.violations == ("omega_1 = omega_2 (10)",)


def test_sum_resonance_violates():
    verdict = validate_frequencies([3, 5, 8])
    assert not verdict.ok
    assert any("omega_1 + omega_2 = omega_3" in v for v in verdict.violations)


def test_frequency_verdict_is_permutation_invariant_and_scale_covariant():
    for omegas in ([3, 5, 8], [8, 3, 5], [6, 10, 16], ["3/2", "5/2", 4]):
        assert not validate_frequencies(omegas).ok
    for omegas in ([10, 13], [13, 10], [20, 26], ["10/7", "13/7"]):
        assert validate_frequencies(omegas).ok


def test_rational_inputs_are_compared_exactly():
    assert not validate_frequencies(["1/3", [1, 3]]).ok
    assert not validate_frequencies([0.5, "1/2"]).ok


def test_frequency_check_details_list_violations():
    result = check_frequencies([10, 10])
    assert not result.passed
    assert result.details["omegas"] == ["10", "10"]
    assert len(result.details["violations"]) == 1


# ---------------------------------------------------------------------------
# Gradients, minimizer, Lyapunov functions
# ---------------------------------------------------------------------------


def test_gradient_cross_check_passes_on_reference_maps(ref_maps):
    result = check_gradients(ref_maps, BOX, points=100, seed=0)
    assert result.passed
    assert result.margin > 0
    assert result.details["points"] == 100


def test_gradient_cross_check_is_seeded(ref_maps):
    a = check_gradients(ref_maps, BOX, seed=3)
    b = check_gradients(ref_maps, BOX, seed=3)
    assert a.margin == b.margin


def test_minimizer_check_passes_for_oracle_point(star):
    result = check_minimizer(star)
    assert result.passed
    assert result.details["on_boundary"] is True


def test_lyapunov_v1_values(ref_maps, star):
    assert lyapunov_v1(star.theta_star, ref_maps, star) == pytest.approx(0.0, abs=1e-12)
    assert lyapunov_v1([0.0, 0.0], ref_maps, star) == pytest.approx(9.0 - star.j_star)


def test_lyapunov_v1_nonnegative_on_safe_samples(ref_maps, star):
    pts = np.random.default_rng(0).uniform(-4.0, 4.0, size=(2000, 2))
    safe = np.asarray(ref_maps.barrier(pts)) >= 0.0
    assert safe.any()
    assert np.all(np.asarray(lyapunov_v1(pts[safe], ref_maps, star)) >= -1e-9)


def test_lyapunov_v_hinges(ref_maps, star):
    alpha = 2.0
    assert lyapunov_v(star.theta_star, ref_maps, star, alpha) == pytest.approx(0.0, abs=1e-9)
    # safe with J above the optimum: objective hinge only
    assert lyapunov_v([0.0, 0.0], ref_maps, star, alpha) == pytest.approx(9.0 - star.j_star)
    # unsafe with J below the optimum: barrier hinge only
    h = ref_maps.barrier([-3.0, 0.0])
    assert lyapunov_v([-3.0, 0.0], ref_maps, star, alpha) == pytest.approx(-alpha * h)


def test_lyapunov_v_needs_positive_alpha(ref_maps, star):
    with pytest.raises(ValueError):
        lyapunov_v([0.0, 0.0], ref_maps, star, 0.0)


# ---------------------------------------------------------------------------
# Alpha selection and angle condition
# ---------------------------------------------------------------------------


def test_alpha_selection_on_reference_maps(alpha_sel):
    assert alpha_sel.l_estimate > 0
    assert math.isfinite(alpha_sel.alpha)
    assert alpha_sel.alpha * alpha_sel.l_estimate > alpha_sel.sup_grad_j
    assert alpha_sel.alpha == pytest.approx(1.1 * alpha_sel.sup_grad_j / alpha_sel.l_estimate)
    assert check_alpha(alpha_sel).passed


def test_user_alpha_below_bound_fails(alpha_sel):
    result = check_alpha(alpha_sel, alpha=0.5 * alpha_sel.sup_grad_j / alpha_sel.l_estimate)
    assert not result.passed
    assert result.margin < 0


def test_linear_barrier_gives_unit_gradient_floor():
    maps = MapPair.from_text("x1^2 + x2^2", "x1", 2)
    sel = select_alpha(maps, -0.5, BoxSpec(lower=[-1.0, -1.0], upper=[1.0, 1.0]), count=41)
    assert sel.l_estimate == 1.0


def test_constant_objective_floors_alpha_at_one():
    maps = MapPair.from_text("3", "x1", 2)
    sel = select_alpha(maps, -0.5, BoxSpec(lower=[-1.0, -1.0], upper=[1.0, 1.0]), count=21)
    assert sel.sup_grad_j == 0.0
    assert sel.alpha == 1.0
    assert check_alpha(sel).passed


def test_empty_band_is_an_oracle_error():
    maps = MapPair.from_text("x1^2", "1 + 0*x1", 2)
    with pytest.raises(OracleError) as info:
        select_alpha(maps, -0.25, BOX, count=21)
    assert info.value.assumption == "nonempty_band"


def test_vanishing_barrier_gradient_is_an_oracle_error():
    maps = MapPair.from_text("x1^2", "-(x1^2 + x2^2)", 2)
    with pytest.raises(OracleError) as info:
        select_alpha(maps, -0.25, BoxSpec(lower=[-1.0, -1.0], upper=[1.0, 1.0]), count=21)
    assert info.value.assumption == "gradient_floor"


def test_case_b_needs_angle_bound(ref_maps):
    with pytest.raises(ValueError):
        select_alpha(ref_maps, -0.25, BOX, count=50, case="B")
    sel = select_alpha(ref_maps, -0.25, BOX, count=50, case="B", c=1.0, f_star=0.5)
    assert sel.alpha >= 1.1 * 1.0 * 0.25 / (sel.l_estimate**2 * 0.75) * (1 - 1e-12)
    assert check_alpha(sel).passed


def test_angle_condition_holds_on_reference_maps(ref_maps, star):
    angle = check_angle_condition(ref_maps, -0.25, 0.5, BOX, star, count=200)
    assert angle.f_star_estimate < 1.0
    assert angle.ok
    result = angle_check_result(angle, -0.25, 0.5)
    assert result.passed
    assert result.margin == pytest.approx(1.0 - angle.f_star_estimate)


def test_perpendicular_gradients_give_nonpositive_cosine():
    maps = MapPair.from_text("x2^2", "x1", 2)
    angle = check_angle_condition(
        maps, -0.5, 0.1, BoxSpec(lower=[-1.0, -1.0], upper=[1.0, 1.0]), _estimate_at([0.0, 0.0]),
        count=41,
    )
    assert angle.f_star_estimate <= 0.0


def test_quadratic_objective_with_linear_barrier_stays_off_collinear():
    maps = MapPair.from_text("x1^2 + x2^2", "x1 - 1", 2)
    angle = check_angle_condition(
        maps, -0.5, 0.6, BoxSpec(lower=[-2.0, -2.0], upper=[2.0, 2.0]), _estimate_at([1.0, 0.0], 1.0),
        count=81,
    )
    assert angle.f_star_estimate < 1.0


# ---------------------------------------------------------------------------
# Exact-flow trajectory checks
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("theta0", [[-1.0, 0.0], [-2.5, -0.5], [2.0, 1.5]])
def test_exact_runs_satisfy_invariance(ref_maps, theta0):
    traj = _exact_run(ref_maps, theta0)
    result = check_invariance(traj, 1.0, 1e-3, maps=ref_maps, m_plus=1e4)
    assert result.passed, result.details
    if traj.column("h")[0] >= 0:
        assert np.all(traj.column("h") >= -1e-3)


def test_invariance_verdict_is_monotone_in_tolerance(ref_maps):
    traj = _exact_run(ref_maps, [-2.5, -0.5])
    tight = check_invariance(traj, 1.0, 1e-3)
    loose = check_invariance(traj, 1.0, 1e-1)
    assert loose.margin >= tight.margin
    assert loose.passed or not tight.passed


def test_invariance_detects_fast_barrier_decay():
    t = np.linspace(0.0, 2.0, 41)
    traj = Trajectory(
        times=t, states=t[:, None], system="exact", dim=1, derived={"h": np.exp(-5.0 * t)}
    )
    result = check_invariance(traj, 1.0, 1e-3)
    assert not result.passed
    assert result.margin < 0


def test_invariance_passes_on_resting_equilibrium():
    t = np.linspace(0.0, 1.0, 11)
    traj = Trajectory(
        times=t, states=np.zeros((11, 1)), system="exact", dim=1, derived={"h": np.full(11, 0.3)}
    )
    assert check_invariance(traj, 1.0, 1e-6).passed


def test_invariance_needs_two_samples():
    traj = Trajectory(times=[0.0], states=[[0.0]], system="exact", dim=1, derived={"h": [0.1]})
    with pytest.raises(ValueError):
        check_invariance(traj, 1.0, 1e-3)


def test_lyapunov_decrease_from_probe_start(ref_maps, star, alpha_sel):
    traj = _exact_run(ref_maps, [-2.5, -0.5], t_final=6.0)
    result = check_lyapunov_decrease(traj, ref_maps, star, alpha_sel.alpha, 0.05, 1e-6)
    assert result.passed, result.details
    assert result.details["pairs_checked"] > 0


def test_lyapunov_passes_when_resting_at_minimizer(ref_maps, star):
    t = np.linspace(0.0, 1.0, 6)
    states = np.tile(star.theta_star, (6, 1))
    traj = Trajectory(times=t, states=states, system="exact", dim=2)
    result = check_lyapunov_decrease(traj, ref_maps, star, 1.0, 0.05, 1e-6)
    assert result.passed
    assert result.details["pairs_checked"] == 0


def test_lyapunov_flags_increase():
    maps = MapPair.from_text("x1^2", "1 + 0*x1", 1)
    t = np.linspace(0.0, 1.0, 5)
    traj = Trajectory(times=t, states=np.linspace(1.0, 2.0, 5)[:, None], system="exact", dim=1)
    result = check_lyapunov_decrease(traj, maps, _estimate_at([0.0]), 1.0, 0.05, 1e-6)
    assert not result.passed


def test_barrier_rate_margin_nonnegative_on_safe_samples(ref_maps):
    pts = np.random.default_rng(1).uniform(-2.0, 2.0, size=(300, 2))
    margin = np.asarray(barrier_rate_margin(pts, ref_maps, 1.0, 1e4))
    assert np.all(margin >= -1e-10)


def test_convergence_check(star):
    t = np.linspace(0.0, 1.0, 3)
    end = star.theta_star + np.array([0.005, 0.0])
    traj = Trajectory(times=t, states=np.vstack([[0.0, 0.0], [0.0, 0.0], end]), system="exact", dim=2)
    assert check_convergence(traj, star, 1e-2).passed
    assert not check_convergence(traj, star, 1e-3).passed


def test_disturbance_gain_is_finite_and_stable(ref_maps):
    gain = estimate_disturbance_gain(
        ref_maps, 1.0, 1e4, BoxSpec(lower=[-3.0, -2.0], upper=[3.0, 2.0]), samples=40
    )
    assert math.isfinite(gain.k_estimate)
    assert gain.k_estimate > 0
    assert set(gain.per_eps) == {0.1, 0.01, 0.001}


def test_assumption_probes_on_reference_maps(ref_maps, star, alpha_sel):
    results = {r.name: r for r in probe_assumptions(ref_maps, BOX, star, alpha=alpha_sel.alpha, count=120)}
    assert set(results) == {
        "assumption_safe_set",
        "assumption_stationary",
        "assumption_collinearity",
        "assumption_positive_definite",
    }
    assert results["assumption_safe_set"].passed
    assert results["assumption_stationary"].passed


# ---------------------------------------------------------------------------
# ES trajectory checks (hand-built trajectories)
# ---------------------------------------------------------------------------


@pytest.fixture
def cfg_1d():
    return EsConfig(k=1e-2, c=1.0, omega_f=10.0, m_plus=1e4, a=0.1, omegas=[10])


def _es_traj(h, h_hat=None, t_final=2.0):
    h = np.asarray(h, dtype=float)
    t = np.linspace(0.0, t_final, h.size)
    derived = {"h": h, "h_hat": h if h_hat is None else np.asarray(h_hat, dtype=float)}
    return Trajectory(times=t, states=np.zeros((h.size, 5)), system="es", dim=1, derived=derived)


def test_practical_safety_passes_when_barrier_never_drops(cfg_1d):
    traj = _es_traj(np.full(21, 0.2))
    assert check_practical_safety(traj, cfg_1d, 0.0, 0.5).passed


def test_practical_safety_is_monotone_in_delta(cfg_1d):
    h = np.concatenate([np.full(10, 0.2), np.full(11, -0.5)])
    traj = _es_traj(h)
    tight = check_practical_safety(traj, cfg_1d, 0.05, 0.5)
    assert not tight.passed
    assert tight.worst_location >= 0.5
    assert check_practical_safety(traj, cfg_1d, 1.0, 0.5).passed
    assert check_practical_safety(traj, cfg_1d, math.inf, 0.5).passed


def test_practical_safety_ignores_the_transient(cfg_1d):
    h = np.concatenate([[0.2, -1.0, -1.0], np.full(18, 0.2)])
    traj = _es_traj(h)
    assert check_practical_safety(traj, cfg_1d, 0.01, 0.5).passed


def test_retention_after_entering_safe_set():
    ok = _es_traj(np.full(5, 0.0), h_hat=[-0.3, -0.1, 0.06, 0.03, -0.01])
    assert check_safe_set_retention(ok).passed
    bad = _es_traj(np.full(5, 0.0), h_hat=[-0.3, 0.06, 0.2, -0.05, 0.1])
    result = check_safe_set_retention(bad)
    assert not result.passed
    assert result.margin == pytest.approx(-0.03)


def test_retention_trivially_passes_when_never_entered():
    result = check_safe_set_retention(_es_traj(np.full(4, 0.0), h_hat=[-0.5, -0.4, -0.2, 0.0]))
    assert result.passed
    assert result.details["entered"] is False


def test_estimator_error_is_zero_for_exact_estimates(ref_maps):
    theta_hat = np.array([-1.2, 0.4])
    s = ref_maps.sample(theta_hat)
    state = EsState(theta_hat=theta_hat, g_j=s.grad_j, eta_j=s.j, g_h=s.grad_h, eta_h=s.h)
    assert np.allclose(estimator_error(state, ref_maps), 0.0, atol=1e-15)


def test_estimator_error_of_zero_state(ref_maps):
    err = estimator_error(np.zeros(8), ref_maps)
    h0 = 2 * math.exp(-1) - 0.5
    assert err == pytest.approx([-6.0, 0.0, -9.0, 0.0, 0.0, -h0], abs=1e-12)


def test_estimator_decay_check_on_settling_error(cfg_1d):
    maps = MapPair.from_text("x1^2", "1 - x1^2", 1)
    t = np.linspace(0.0, 2.0, 41)
    # estimates converge to the true values at θ̂ = 0.5 (∇J=1, J=0.25, ∇h=-1, h=0.75)
    decay = np.exp(-cfg_1d.omega_f * t)[:, None]
    truth = np.array([0.5, 1.0, 0.25, -1.0, 0.75])
    states = truth - decay * np.array([0.0, 1.0, 0.25, -1.0, 0.75])
    traj = Trajectory(times=t, states=states, system="es", dim=1)
    result = check_estimator_decay(traj, cfg_1d, maps, 0.5)
    assert result.passed
    assert result.details["transient_exceeds_floor"] is True


def test_reduction_equivalence_with_time_rescale():
    t_exact = np.linspace(0.0, 1.0, 11)
    exact = Trajectory(times=t_exact, states=t_exact[:, None], system="exact", dim=1)
    t_es = np.linspace(0.0, 100.0, 6)
    es_states = np.zeros((6, 5))
    es_states[:, 0] = t_es * 0.01 + 0.05
    es = Trajectory(times=t_es, states=es_states, system="es", dim=1)
    assert check_reduction_equivalence(es, exact, 0.01, tol=0.06).passed
    assert not check_reduction_equivalence(es, exact, 0.01, tol=0.04).passed


# ---------------------------------------------------------------------------
# Folding per-run results
# ---------------------------------------------------------------------------


def test_combine_checks_reports_worst_run():
    runs = [
        CheckResult(name="invariance", passed=True, margin=0.5, worst_location=1.0),
        CheckResult(name="invariance", passed=False, margin=-0.2, worst_location=3.0),
        CheckResult(name="invariance", passed=True, margin=0.1, worst_location=2.0),
    ]
    folded = combine_checks("invariance", runs)
    assert not folded.passed
    assert folded.margin == pytest.approx(-0.2)
    assert folded.worst_location == {"run": 1, "at": 3.0}
    assert folded.details["failed_runs"] == [1]


def test_combine_checks_of_nothing_passes():
    folded = combine_checks("lyapunov", [])
    assert folded.passed
    assert folded.details["runs"] == 0
