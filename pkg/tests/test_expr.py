"""Expression grammar: parsing, evaluation, symbolic derivatives."""

import cmath

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltvpassivity import _expr
from ltvpassivity.errors import ParseError


@pytest.mark.parametrize("src, t, expected", [
    ("1 + 2*3", 0.0, 7.0),
    ("2^(-2)", 0.0, 0.25),
    ("-t^2", 3.0, -9.0),
    ("1/(1 + t^2)", 2.0, 0.2),
    ("(t - 1)**3", 3.0, 8.0),
    ("k*t", 2.0, None),
    ("i*i", 0.0, -1.0),
    ("2.5e-1*t", 4.0, 1.0),
])
def test_evaluate(src, t, expected):
    if expected is None:
        with pytest.raises(ParseError, match="unknown identifier"):
            _expr.parse_expr(src)
        return
    node = _expr.parse_expr(src)
    assert _expr.evaluate(node, t) == pytest.approx(expected)


def test_parameters_are_substituted():
    node = _expr.parse_expr("k/m", {"k": 2.0, "m": 4.0})
    assert isinstance(node, _expr.Const)
    assert node.value == 0.5


@pytest.mark.parametrize("src", ["1 +", "t t", "exp(t)", "(1", "1 $ 2", "", "x + 1", "t^0.5", "2^3^2"])
def test_rejects_malformed(src):
    with pytest.raises(ParseError):
        _expr.parse_expr(src)


@pytest.mark.parametrize("src, t", [
    ("t^3 - 2*t", 1.3),
    ("(t - 2)^(-2)*t", 0.7),
    ("1/(1 + t^2)", -0.4),
    ("(1 - t)/(3 + t^4)", 2.0),
    ("-(t + 1)^5/7", 0.9),
    ("(2 + i)*t^2", 1.1),
])
def test_derivative_matches_central_difference(src, t):
    node = _expr.parse_expr(src)
    d = _expr.evaluate(_expr.differentiate(node), t)
    h = 1e-6
    fd = (_expr.evaluate(node, t + h) - _expr.evaluate(node, t - h)) / (2 * h)
    assert abs(d - fd) <= 1e-6 * (1 + abs(fd))


def test_denominators_are_collected():
    dens = _expr.denominators(_expr.parse_expr("1/(t - 1) + t/(2 + t)"))
    assert len(dens) == 2
    vanish = {r for d in dens for r in (1.0, -2.0) if abs(_expr.evaluate(d, r)) < 1e-12}
    assert vanish == {1.0, -2.0}


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), t=st.floats(-3, 3))
def test_source_round_trip(a, b, t):
    node = _expr.parse_expr(f"({a!r})*t^2 + ({b!r})*t - 1")
    again = _expr.parse_expr(_expr.to_source(node))
    assert cmath.isclose(_expr.evaluate(node, t), _expr.evaluate(again, t), rel_tol=1e-12, abs_tol=1e-12)
