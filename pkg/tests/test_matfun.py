import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltvpassivity.errors import AtBreakpoint, OutOfDomain, ParseError
from ltvpassivity.matfun import (LEFT, POINT, RIGHT, PiecewiseMatrixFunction, SampledSegment,
                                 congruence_fn, conj_t, make_grid, product_fn)

P = PiecewiseMatrixFunction


@pytest.fixture
def step():
    """Scalar 1 on [0, 1), 2 - t on [1, 2] with a point value 5 at t = 1."""
    return P.from_expressions([(0, 1, [["1"]]), (1, 2, [["2 - t"]])], points={1.0: [["5"]]})


def test_make_grid_contains_breakpoints():
    g = make_grid((0, 1), 4, [1 / 3, 0.5])
    assert 1 / 3 in g and 0.5 in g
    assert g[0] == 0 and g[-1] == 1
    assert np.all(np.diff(g) > 0)


@pytest.mark.parametrize("t, expected", [(0.0, 1.0), (0.5, 1.0), (1.0, 5.0), (1.5, 0.5), (2.0, 0.0)])
def test_point_values(step, t, expected):
    assert step(t)[0, 0] == pytest.approx(expected)


def test_one_sided_limits_at_breakpoint(step):
    rec = step.one_sided_limits(1.0)
    assert rec.left_limit[0, 0] == pytest.approx(1.0)
    assert rec.point_value[0, 0] == pytest.approx(5.0)
    assert rec.right_limit[0, 0] == pytest.approx(1.0)
    assert rec.left_jump[0, 0] == pytest.approx(4.0)
    assert rec.right_jump[0, 0] == pytest.approx(-4.0)


def test_derivative_undefined_at_breakpoint(step):
    with pytest.raises(AtBreakpoint):
        step.derivative(1.0)
    assert step.one_sided_derivative(1.0, LEFT)[0, 0] == pytest.approx(0.0)
    assert step.one_sided_derivative(1.0, RIGHT)[0, 0] == pytest.approx(-1.0)


@pytest.mark.parametrize("t", [-0.1, 2.5])
def test_out_of_domain(step, t):
    with pytest.raises(OutOfDomain):
        step(t)


def test_spring_jump_is_minus_one_third(msd):
    _, Q = msd
    rec = Q.one_sided_limits(1.0)
    assert rec.left_jump[0, 0].real == pytest.approx(-1 / 3, abs=1e-15)
    assert np.allclose(rec.right_jump, 0)


def test_chain_orders_sides(step):
    times, sides, vals = step.chain(np.linspace(0, 2, 3))
    assert list(times) == [0.0, 1.0, 1.0, 1.0, 2.0]
    assert list(sides) == [POINT, LEFT, POINT, RIGHT, POINT]
    assert vals[:, 0, 0].real.tolist() == pytest.approx([1, 1, 5, 1, 0])


def test_sample_matches_chain(step):
    times, sides, vals = step.chain(make_grid((0, 2), 7))
    assert np.allclose(step.sample(times, sides), vals)


def test_sampled_exponential_interpolates():
    ts = np.linspace(0, 1, 101)
    f = P([SampledSegment(0, 1, ts, np.exp(2 * ts))])
    t = np.linspace(0, 1, 37)
    assert np.max(np.abs(f(t)[:, 0, 0] - np.exp(2 * t))) < 1e-3
    assert np.isclose(f.derivative(0.505)[0, 0].real, 2 * np.exp(1.01), rtol=1e-3)
    assert len(f.kinks) == 99


def test_sampled_rejects_unsorted_times():
    with pytest.raises(ParseError):
        SampledSegment(0, 1, [0, 0.7, 0.5, 1], np.zeros(4))


def test_segments_must_tile():
    with pytest.raises(ValueError):
        P.from_expressions([(0, 1, [["1"]]), (1.5, 2, [["1"]])])


def test_restrict(step):
    r = step.restrict(0.5, 1.5)
    assert r.interval == (0.5, 1.5)
    assert r(1.0)[0, 0] == pytest.approx(5.0)
    assert r(1.25)[0, 0] == pytest.approx(0.75)


def test_total_variation_of_monotone_scalar(msd):
    _, Q = msd
    tv = Q.total_variation(-1, 3, np.linspace(-1, 3, 9))
    assert tv.value == pytest.approx(1.0)


def test_congruence_derivative_uses_product_rule():
    V = P.from_expressions([(0, 1, [["1", "t"], ["0", "1 + t^2"]])])
    Q = P.from_expressions([(0, 1, [["2 - t", "0"], ["0", "1"]])])
    C = congruence_fn(V, Q)
    t, h = 0.37, 1e-6
    fd = (C(t + h) - C(t - h)) / (2 * h)
    assert np.allclose(C.derivative(t), fd, atol=1e-7)
    Vt, Qt = V(t), Q(t)
    assert np.allclose(C(t), conj_t(Vt) @ Qt @ Vt)


def test_product_of_piecewise_refines_breakpoints():
    F = P.from_expressions([(0, 1, [["1"]]), (1, 2, [["2"]])])
    G = P.from_expressions([(0, 0.5, [["t"]]), (0.5, 2, [["3"]])])
    H = product_fn(F, G)
    assert list(H.breakpoints) == [0.5, 1.0]
    assert H(1.5)[0, 0] == pytest.approx(6.0)


@settings(max_examples=30, deadline=None)
@given(c=st.lists(st.floats(-3, 3), min_size=3, max_size=3), t=st.floats(0.01, 0.99))
def test_symbolic_derivative_of_polynomial(c, t):
    src = f"({c[0]!r}) + ({c[1]!r})*t + ({c[2]!r})*t^2"
    f = P.from_expressions([(0, 1, [[src]])])
    assert f.derivative(t)[0, 0] == pytest.approx(c[1] + 2 * c[2] * t, abs=1e-12)
