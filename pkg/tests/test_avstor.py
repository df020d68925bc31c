import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ltvpassivity.avstor import (AvailableStorageSampler, HorizonPolicy, QuadraticProblem,
                                 QuadraticSampler, available_storage, horizon_optimize,
                                 _cell_propagators, minimality_audit, polarization_recover,
                                 quadratic_identity_audit)
from ltvpassivity.errors import InconsistentSampler, NotConverged

from conftest import lti

FAST = HorizonPolicy(max_horizon=8, max_cells=64)


def riccati_available_storage(d, T):
    """``-pi(0)/2`` for ``x' = -x + u, y = x + d u`` on ``[0, T]`` (continuous inputs)."""
    sol = solve_ivp(lambda t, p: (1 + p) ** 2 / (2 * d) + 2 * p, (T, 0.0), [0.0],
                    rtol=1e-11, atol=1e-13)
    return -0.5 * sol.y[0, -1]


@pytest.mark.parametrize("d", [0.25, 0.5, 2.0])
def test_feedthrough_matches_riccati(d):
    sys = lti([[-1]], [[1]], [[1]], [[d]], (0, 20))
    est = available_storage(sys, 0.0, [1.0], HorizonPolicy(max_cells=128))
    exact = riccati_available_storage(d, 16.0)
    assert est.converged
    assert est.converged_value <= exact * (1 + 1e-9)
    assert est.converged_value == pytest.approx(exact, rel=5e-3)


def test_scalar_lti_close_to_half(scalar_lti):
    sys, _ = scalar_lti
    est = available_storage(sys, 0.0, [1.0], FAST)
    assert est.converged_value == pytest.approx(0.5, rel=0.02)
    vals = [v for _, v in sorted(est.value_per_horizon.items())]
    assert vals == sorted(vals)


def test_zero_state_has_zero_value(scalar_lti):
    sys, _ = scalar_lti
    est = available_storage(sys, 0.0, [0.0], FAST)
    assert est.converged_value == 0.0
    assert est.converged


def test_antipassive_is_unbounded():
    sys = lti([[-1]], [[1]], [[0]], [[-1]], (0, 20))
    est = available_storage(sys, 0.0, [1.0], FAST)
    assert est.unbounded
    assert est.to_dict()["converged_value"] is None
    assert horizon_optimize(sys, 0.0, [1.0], 1.0, 1).unbounded


def test_strict_mode_raises_when_limits_hit(scalar_lti):
    sys, _ = scalar_lti
    with pytest.raises(NotConverged) as info:
        available_storage(sys, 0.0, [1.0], HorizonPolicy(max_horizon=2, max_cells=16), strict=True)
    assert info.value.estimate.converged_value > 0


def test_quadratic_problem_matches_single_cell_closed_form():
    # one cell of width T with x0 = 0: J(u) = int_0^T y u = u^2 (T - 1 + e^-T)
    sys = lti([[-1]], [[1]], [[1]], [[0]], (0, 4))
    T = 1.5
    res = horizon_optimize(sys, 0.0, [0.0], T, 1)
    assert res.value == 0.0
    prob = QuadraticProblem.from_cells(_cell_propagators(sys, np.array([0.0, T])), T)
    assert prob.H[0, 0].real == pytest.approx(T - 1 + np.exp(-T), rel=1e-9)


def test_polarization_of_exact_quadratic():
    rng = np.random.default_rng(0)
    G = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    Q = G @ G.conj().T
    Qr, resid = polarization_recover(QuadraticSampler(Q))
    assert np.allclose(Qr, Q, atol=1e-12)
    assert resid < 1e-12


def test_polarization_rejects_non_quadratic_sampler():
    class Quartic:
        n = 2

        def __call__(self, x):
            return float(np.linalg.norm(x) ** 4)

    with pytest.raises(InconsistentSampler):
        polarization_recover(Quartic())
    assert not quadratic_identity_audit(Quartic(), probes=3).passed


def test_available_storage_sampler_is_quadratic_and_minimal(scalar_lti):
    sys, Q = scalar_lti
    smp = AvailableStorageSampler(sys, 0.0, FAST)
    Qa, resid = polarization_recover(smp)
    assert Qa[0, 0].real == pytest.approx(1.0, rel=0.02)
    assert resid < 1e-10
    assert quadratic_identity_audit(smp, probes=3, seed=1).passed
    out = minimality_audit(smp, Q, 0.0, probes=5)
    assert out["passed"]


def test_report_is_plot_ready(scalar_lti):
    sys, _ = scalar_lti
    d = available_storage(sys, 0.0, [1.0], FAST).to_dict()
    assert {"horizon", "cells", "value", "unbounded"} <= set(d["table"][0])
    assert d["x0"] == [[1.0, 0.0]]
