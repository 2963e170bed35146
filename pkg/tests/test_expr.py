"""
Tests for safees.core.expr

What we pin down:

- Grammar: precedence, associativity, literals, functions
- Error reporting: syntax errors carry a position; unknown names and
  out-of-range variables are rejected at parse time
- Domain errors at evaluation carry the operation and the node position
- Forward-mode gradients agree with central differences on the
  reference maps
- Printing and re-parsing preserves evaluation
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from safees.core.expr import (
    DomainError,
    ExprSyntaxError,
    MapPair,
    evaluate,
    fd_grad,
    grad,
    parse,
    to_text,
    value_and_grad,
)
from safees.scenarios import REFERENCE_H, REFERENCE_J


@pytest.fixture(scope="module")
def j_ast():
    return parse(REFERENCE_J, 2)


@pytest.fixture(scope="module")
def h_ast():
    return parse(REFERENCE_H, 2)


# ---------------------------------------------------------------------------
# Parsing and evaluation
# ---------------------------------------------------------------------------


def test_reference_objective_values(j_ast):
    assert evaluate(j_ast, [0.0, 0.0]) == pytest.approx(9.0)
    assert evaluate(j_ast, [-3.0, 0.0]) == pytest.approx(0.0)


def test_reference_barrier_values(h_ast):
    assert evaluate(h_ast, [1.0, 0.0]) == pytest.approx(0.518316, abs=1e-6)
    at_unconstrained_min = evaluate(h_ast, [-3.0, 0.0])
    assert at_unconstrained_min == pytest.approx(math.exp(-16) + math.exp(-4) - 0.5, abs=1e-12)
    assert at_unconstrained_min < 0.0


def test_single_bump_is_one_at_its_center():
    ast = parse("exp(-(x1-1)^2 - x2^2)", 2)
    assert evaluate(ast, [1.0, 0.0]) == pytest.approx(1.0)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("1 + 2 * 3", 7.0),
        ("(1 + 2) * 3", 9.0),
        ("8 / 4 / 2", 1.0),
        ("10 - 4 - 3", 3.0),
        ("2^3^2", 64.0),
        ("-2^2", -4.0),
        ("2 * -3", -6.0),
        ("2^-1", 0.5),
        ("+5", 5.0),
        ("1e-3 * 1000", 1.0),
        (".5 + 0.5", 1.0),
        ("abs(-3)", 3.0),
        ("sqrt(16) + ln(1)", 4.0),
        ("cos(0) + sin(0)", 1.0),
    ],
)
def test_precedence_and_associativity(text, expected):
    assert evaluate(parse(text, 1), [0.0]) == pytest.approx(expected)


def test_whitespace_is_insignificant():
    a = parse("x1*x2+  3", 2)
    b = parse(" x1 * x2 + 3 ", 2)
    theta = [1.5, -2.0]
    assert evaluate(a, theta) == evaluate(b, theta)


def test_batched_evaluation_matches_pointwise(h_ast):
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [-3.0, 0.5]])
    batch = evaluate(h_ast, pts)
    assert isinstance(batch, np.ndarray)
    assert batch.shape == (3,)
    for row, value in zip(pts, batch):
        assert value == pytest.approx(evaluate(h_ast, row), rel=1e-15)


def test_constant_expression_broadcasts_over_batch():
    out = evaluate(parse("5", 2), np.zeros((4, 2)))
    assert out.shape == (4,)
    assert np.all(out == 5.0)


# ---------------------------------------------------------------------------
# Parse errors
# ---------------------------------------------------------------------------


def test_variable_index_beyond_dimension_is_rejected():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x3 + 1", 2)
    assert "exceeds dimension" in str(info.value)
    assert info.value.position == 0


@pytest.mark.parametrize(
    "text, position",
    [
        ("2 3", 2),
        ("x1 + y", 5),
        ("foo(x1)", 0),
    ],
)
def test_syntax_errors_carry_position(text, position):
    with pytest.raises(ExprSyntaxError) as info:
        parse(text, 1)
    assert info.value.position == position
    assert info.value.column == position + 1


def test_unexpected_end_points_past_the_text():
    with pytest.raises(ExprSyntaxError) as info:
        parse("(x1 + ", 1)
    assert info.value.position >= len("(x1 +")


@pytest.mark.parametrize("text", ["", "   "])
def test_empty_expression_is_rejected(text):
    with pytest.raises(ExprSyntaxError):
        parse(text, 1)


def test_non_constant_exponent_is_rejected():
    with pytest.raises(ExprSyntaxError, match="constant"):
        parse("x1^x2", 2)


def test_bare_function_name_is_rejected():
    with pytest.raises(ExprSyntaxError, match="argument"):
        parse("exp + 1", 1)


def test_dimension_must_be_positive():
    with pytest.raises(ValueError):
        parse("1", 0)


def test_syntax_error_is_a_value_error():
    with pytest.raises(ValueError):
        parse("1 +* 2", 1)


# ---------------------------------------------------------------------------
# Domain errors
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, theta, operation",
    [
        ("1 / (x1 - 1)", [1.0], "div"),
        ("ln(x1)", [0.0], "ln"),
        ("ln(x1)", [-1.0], "ln"),
        ("sqrt(x1)", [-0.5], "sqrt"),
        ("x1^0.5", [-2.0], "pow"),
        ("x1^-2", [0.0], "pow"),
    ],
)
def test_domain_violations_name_the_operation(text, theta, operation):
    with pytest.raises(DomainError) as info:
        evaluate(parse(text, 1), theta)
    assert info.value.operation == operation


def test_domain_error_reports_node_position():
    with pytest.raises(DomainError) as info:
        evaluate(parse("x2 + ln(x1)", 2), [0.0, 1.0])
    assert info.value.position == 5


def test_domain_error_in_any_batch_row_is_raised():
    ast = parse("ln(x1)", 1)
    with pytest.raises(DomainError):
        evaluate(ast, np.array([[1.0], [2.0], [-1.0]]))


def test_sqrt_is_evaluable_but_not_differentiable_at_zero():
    ast = parse("sqrt(x1)", 1)
    assert evaluate(ast, [0.0]) == 0.0
    with pytest.raises(DomainError):
        grad(ast, [0.0])


def test_integer_power_accepts_negative_base():
    assert evaluate(parse("x1^3", 1), [-2.0]) == pytest.approx(-8.0)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def test_objective_gradient_examples(j_ast):
    assert np.allclose(grad(j_ast, [-3.0, 0.0]), [0.0, 0.0])
    assert np.allclose(grad(j_ast, [0.0, 0.0]), [6.0, 0.0])


def test_barrier_gradient_vanishes_at_origin_by_symmetry(h_ast):
    g = grad(h_ast, [0.0, 0.0])
    assert np.allclose(g, [0.0, 0.0], atol=1e-15)
    assert np.allclose(fd_grad(h_ast, [0.0, 0.0]), [0.0, 0.0], atol=1e-9)


def test_fd_grad_on_quadratic_is_exact_up_to_roundoff(j_ast):
    assert np.allclose(fd_grad(j_ast, [0.0, 0.0], step=1e-5), [6.0, 0.0], atol=1e-8)


def test_constant_expression_has_zero_gradient():
    ast = parse("5", 3)
    assert np.array_equal(grad(ast, [1.0, -2.0, 0.3]), np.zeros(3))
    assert np.array_equal(fd_grad(ast, [1.0, -2.0, 0.3]), np.zeros(3))


def test_fd_grad_requires_positive_step(j_ast):
    with pytest.raises(ValueError):
        fd_grad(j_ast, [0.0, 0.0], step=0.0)


def test_abs_uses_zero_subgradient_at_kink():
    assert grad(parse("abs(x1)", 1), [0.0])[0] == 0.0
    assert grad(parse("abs(x1)", 1), [-2.0])[0] == -1.0


@pytest.mark.parametrize("which", ["J", "h"])
def test_dual_gradient_matches_finite_differences(which):
    ast = parse(REFERENCE_J if which == "J" else REFERENCE_H, 2)
    rng = np.random.default_rng(20240601)
    for theta in rng.uniform(-4.0, 4.0, size=(100, 2)):
        exact = grad(ast, theta)
        approx = fd_grad(ast, theta, step=1e-5)
        assert np.linalg.norm(exact - approx) <= 1e-6 * (1.0 + np.linalg.norm(exact))


def test_batched_gradient_matches_pointwise(h_ast):
    pts = np.random.default_rng(3).uniform(-2.0, 2.0, size=(5, 2))
    values, partials = value_and_grad(h_ast, pts)
    assert values.shape == (5,)
    assert partials.shape == (5, 2)
    for row, g in zip(pts, partials):
        assert np.allclose(g, grad(h_ast, row), rtol=1e-14, atol=1e-16)


def test_gradient_of_mixed_expression():
    ast = parse("x1 * sin(x2) / (1 + x1^2)", 2)
    x1, x2 = 0.7, -1.3
    d1 = math.sin(x2) * (1 - x1**2) / (1 + x1**2) ** 2
    d2 = x1 * math.cos(x2) / (1 + x1**2)
    assert np.allclose(grad(ast, [x1, x2]), [d1, d2], rtol=1e-13)


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "text",
    [
        REFERENCE_J,
        REFERENCE_H,
        "-x1^2 + 2^3^2 * x2 - abs(x1 - x2)",
        "sqrt(1 + x1^2) / (2 + cos(x2)) - ln(3 + sin(x1*x2))",
        "x1^-1.5 + 1e-3 * x2",
    ],
)
def test_print_then_parse_preserves_evaluation(text):
    original = parse(text, 2)
    reparsed = parse(to_text(original), 2)
    rng = np.random.default_rng(11)
    pts = rng.uniform(0.1, 4.0, size=(100, 2))
    a = evaluate(original, pts)
    b = evaluate(reparsed, pts)
    assert np.allclose(a, b, rtol=1e-12, atol=0.0)


# ---------------------------------------------------------------------------
# MapPair
# ---------------------------------------------------------------------------


def test_map_pair_sample_bundles_values_and_gradients():
    maps = MapPair.from_text(REFERENCE_J, REFERENCE_H, 2)
    s = maps.sample([0.0, 0.0])
    assert s.j == pytest.approx(9.0)
    assert s.h == pytest.approx(2 * math.exp(-1) - 0.5)
    assert np.allclose(s.grad_j, [6.0, 0.0])
    assert np.allclose(s.grad_h, [0.0, 0.0], atol=1e-15)


def test_map_pair_rejects_variables_beyond_dimension():
    with pytest.raises(ValueError):
        MapPair(j_ast=parse("x2", 2), h_ast=parse("x1", 2), dim=1)
