import numpy as np
import pytest

from ltvpassivity.errors import NearSingular, NonMonotoneRank, NotStorage, ShapeMismatch
from ltvpassivity.matfun import PiecewiseMatrixFunction, conj_t
from ltvpassivity.nsd import (certify_unitary_nsd, kernel_chain, nsd_constant, nsd_flow,
                              nsd_unitary, ql, ql_factorization, rank_profile, rank_threshold)

P = PiecewiseMatrixFunction


def test_rank_threshold_conventions():
    base = rank_threshold(2.0, 3)
    assert base == pytest.approx(3 * np.finfo(float).eps * 2.0)
    assert rank_threshold(2.0, 3, transported=True, rtol=1e-9) == pytest.approx(2e-8)


def test_msd_rank_profile(msd):
    sys, Q = msd
    res = nsd_flow(sys, Q, t0=-1.0)
    prof = res.rank_profile
    assert len(prof.drop_times) == 1
    assert abs(prof.drop_times[0] - 1.0) <= 1e-5
    assert [r for _, _, r in prof.intervals] == [2, 1]
    assert prof.one_sided[0][1:] == (2, 1, 1)
    assert prof.sequence() == [2, 2, 1, 1, 1]
    assert res.tilde_report.decreasing


def test_three_drop_profile(three_drop):
    _, Q = three_drop
    res = nsd_constant(Q)
    assert np.allclose(res.rank_profile.drop_times, [1.0, 2.0], atol=1e-5)
    assert res.chain.sizes == [0, 1, 2, 3]
    # the first kernel vector is e2, the second extends it by e3
    v = np.abs(res.chain.vectors)
    assert np.allclose(v[:, 0], [0, 1, 0]) and np.allclose(v[:, 1], [0, 0, 1])
    # V0 = reversed chain: leading column spans the range that never dies
    assert np.allclose(np.abs(res.V0[:, 0]), [1, 0, 0])
    assert res.block_residual <= 1e-12


def test_definite_q_has_no_drops():
    Q = P.from_expressions([(0, 1, [["2 - t", "0"], ["0", "1"]])])
    res = nsd_constant(Q)
    assert res.rank_profile.drop_times.size == 0
    assert res.chain.sizes == [0, 2]


def test_rising_rank_is_rejected():
    Q = P.from_expressions([(0, 1, [["1", "0"], ["0", "0"]]), (1, 2, [["1", "0"], ["0", "t - 1"]])])
    with pytest.raises(NonMonotoneRank):
        rank_profile(Q)


def test_kernel_chain_bases_are_nested(three_drop):
    _, Q = three_drop
    prof = rank_profile(Q)
    ch = kernel_chain(Q, prof)
    for lo, hi in zip(ch.bases[:-1], ch.bases[1:]):
        if lo.shape[1]:
            assert np.linalg.norm(lo - hi @ (conj_t(hi) @ lo)) <= 1e-12
    assert ch.max_residual <= prof.threshold


def test_scalar_example_unitary_factor_breaks_monotonicity(scalar_flow):
    sys, Q = scalar_flow
    res = nsd_unitary(sys, Q, t0=0.0)
    assert res.tilde_report.decreasing
    assert res.hat_decreasing is False
    assert any("not weakly decreasing" in n for n in res.notes)
    # U is the phase of V = X, so U* Q U = Q = 1 + t^2
    t = res.times
    assert np.allclose(np.asarray(res.hat)[:, 0, 0].real, 1 + t ** 2)


def test_non_storage_for_closed_system():
    A = P.constant([[1.0]], (0, 1))
    Q = P.constant([[1.0]], (0, 1))
    with pytest.raises(NotStorage):
        nsd_flow(A, Q)


@pytest.mark.parametrize("seed", range(4))
def test_ql_reassembles(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    U, L = ql(M)
    assert np.allclose(U @ L, M, atol=1e-12)
    assert np.allclose(conj_t(U) @ U, np.eye(4), atol=1e-12)
    assert np.allclose(np.triu(L, 1), 0)
    assert np.all(np.diag(L).real > 0)


def test_ql_detects_dependence():
    M = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(NearSingular):
        ql(M)
    with pytest.raises(ShapeMismatch):
        ql(np.ones((2, 3)))


def test_ql_factorization_along_time(msd):
    sys, Q = msd
    res = nsd_flow(sys, Q, t0=-1.0)
    times, sides, U, L = ql_factorization(res.V, np.linspace(-1, 3, 21))
    V = res.V.sample(times, sides)
    assert np.max(np.abs(U @ L - V)) <= 1e-10


def test_certify_given_unitary(msd):
    _, Q = msd
    out = certify_unitary_nsd(Q, [[0, 1], [1, 0]])
    assert out["unitary_residual"] < 1e-14
    assert out["block_residual"] == 0.0
    with pytest.raises(ShapeMismatch):
        certify_unitary_nsd(Q, [[1, 1], [0, 1]])


def test_manifest_is_deterministic(msd):
    sys, Q = msd
    a = nsd_flow(sys, Q, t0=-1.0).to_json()
    b = nsd_flow(sys, Q, t0=-1.0).to_json()
    assert a == b
