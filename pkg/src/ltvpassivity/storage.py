"""Verification of quadratic storage candidates ``V(t, x) = x* Q(t) x / 2``.

Three kinds of evidence are offered:

* trajectory trials of the dissipation inequality
  ``V(t1, x(t1)) - V(t0, x(t0)) <= int_{t0}^{t1} Re(y* u) dt``;
* the pointwise matrix test ``W(t) <= 0``, which is sufficient only;
* the kernel inclusion ``ker Q <= ker(QA + Q') & ker C``, which is necessary.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (IntegrationFailure, NonMonotoneRank, NotHermitian, ShapeMismatch,
                     SingularityDetected)
from .loewner import (StorageCandidate, auc_check, check_weak_decrease, conj_t, max_eig,
                      q_along_flow)
from .matfun import PiecewiseMatrixFunction, make_grid
from .nsd import rank_profile, rank_threshold
from .odeflow import (LtvSystem, PiecewiseConstantInput, fundamental_solution,
                      solve_inhomogeneous, supply_integral)

__all__ = [
    "Trial", "DissipationReport", "SupplyVerdict", "KernelRecord", "KernelConditionReport",
    "AuditReport", "AdversarialResult", "dissipation_trial", "dissipation_check",
    "pointwise_supply_check", "kernel_condition_check", "storage_regularity_audit",
    "adversarial_violation", "random_passive_lti", "DEFAULT_SEED",
]

DEFAULT_SEED = 20240611
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def tau_diss(rhs: float, rel: float = 1e-6) -> float:
    return rel * (1.0 + abs(rhs))


def _candidate(Q, grid=None):
    return Q if isinstance(Q, StorageCandidate) else StorageCandidate(Q, grid)


def _check_pair(sys: LtvSystem, cand: StorageCandidate):
    if cand.n != sys.n:
        raise ShapeMismatch(f"Q is {cand.n} x {cand.n} but the state has dimension {sys.n}")


def _quad(Q: PiecewiseMatrixFunction, t, x) -> float:
    return 0.5 * float(np.real(np.vdot(x, Q.evaluate(t) @ x)))


@dataclass
class Trial:
    trial_id: int
    t0: float
    t1: float
    lhs: float
    rhs: float
    slack: float
    status: str = "ok"
    tol_rel: float = 1e-6

    @property
    def violated(self):
        return self.status == "ok" and self.slack < -tau_diss(self.rhs, self.tol_rel)


@dataclass
class DissipationReport:
    """``verdict`` is ``violated`` iff some trial slack is below ``-tau_diss``."""

    verdict: str
    trials: list
    worst_slack: float
    seed: int | None
    zero_state_ok: bool
    nonnegative: bool
    tolerance_rule: str = "slack >= -1e-6 * (1 + |rhs|)"

    def to_dict(self):
        return {"verdict": self.verdict, "worst_slack": self.worst_slack, "seed": self.seed,
                "zero_state_ok": self.zero_state_ok, "nonnegative": self.nonnegative,
                "tolerance_rule": self.tolerance_rule,
                "trials": [asdict(t) for t in self.trials]}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def dissipation_trial(sys, Q, t0, t1, x0, u, trial_id=0, tol_rel=1e-6) -> Trial:
    """One trajectory check on ``[t0, t1]``; ``u`` as for :func:`solve_inhomogeneous`."""
    f = Q.Q if isinstance(Q, StorageCandidate) else Q
    try:
        traj = solve_inhomogeneous(sys, t0, x0, u, span=(t0, t1))
    except (IntegrationFailure, SingularityDetected):
        return Trial(trial_id, float(t0), float(t1), np.nan, np.nan, np.nan,
                     "integration-failure", tol_rel)
    x0v = traj.x[0]
    x1v = traj.x[-1]
    lhs = _quad(f, t1, x1v) - _quad(f, t0, x0v)
    rhs = supply_integral(traj, t0, t1)
    return Trial(trial_id, float(t0), float(t1), float(lhs), float(rhs), float(rhs - lhs),
                 "ok", tol_rel)


def _random_window(rng, a, b, bps, min_width):
    roll = rng.random()
    width = b - a
    if bps.size and roll < 0.35:
        bp = bps[rng.integers(bps.size)]
        t0 = rng.uniform(max(a, bp - 0.5 * width), bp - 1e-3 * width)
        t1 = rng.uniform(bp + 1e-3 * width, min(b, bp + 0.5 * width))
        return max(a, t0), min(b, t1)
    if bps.size and roll < 0.5:
        # endpoint exactly on a breakpoint
        bp = bps[rng.integers(bps.size)]
        if rng.random() < 0.5 and bp - a > min_width:
            return rng.uniform(a, bp - min_width), bp
        if b - bp > min_width:
            return bp, rng.uniform(bp + min_width, b)
    t0, t1 = np.sort(rng.uniform(a, b, 2))
    if t1 - t0 < min_width:
        t1 = min(b, t0 + min_width)
        t0 = t1 - min_width
    return t0, t1


def dissipation_check(sys: LtvSystem, Q, trials: int = 200, seed: int = DEFAULT_SEED,
                      window=None, amplitude: float = 1.0, cells: int = 8,
                      complex_states: bool | None = None,
                      tol_rel: float = 1e-6) -> DissipationReport:
    """Randomized trajectory trials of the dissipation inequality.

    Parameters
    ----------
    sys : LtvSystem
    Q : StorageCandidate or PiecewiseMatrixFunction
    trials : int
        Number of random trials.
    seed : int
        Seed of ``numpy.random.default_rng``; reruns are identical.
    window : tuple, optional
        Sub-interval to sample from; defaults to the common interval.
    amplitude : float
        Inputs are uniform in ``[-amplitude, amplitude]`` per cell.
    cells : int
        Input cells per trial window.
    tol_rel : float
        A trial is violated when ``slack < -tol_rel * (1 + |rhs|)``.

    Returns
    -------
    DissipationReport
        ``inconclusive`` if no trial was violated but some failed to integrate.
    """
    cand = _candidate(Q)
    _check_pair(sys, cand)
    a = max(sys.interval[0], cand.interval[0])
    b = min(sys.interval[1], cand.interval[1])
    if window is not None:
        a, b = max(a, window[0]), min(b, window[1])
    bps = np.unique(np.concatenate([sys.breakpoints, cand.breakpoints]))
    bps = bps[(bps > a) & (bps < b)]
    if complex_states is None:
        complex_states = not sys.is_real()
    rng = np.random.default_rng(seed)
    n, m = sys.n, sys.m
    out = []
    for i in range(trials):
        t0, t1 = _random_window(rng, a, b, bps, 1e-2 * (b - a))
        x0 = rng.normal(size=n)
        if complex_states:
            x0 = x0 + 1j * rng.normal(size=n)
        x0 = x0 / max(np.linalg.norm(x0), 1e-12) * rng.random() ** (1.0 / n)
        vals = rng.uniform(-amplitude, amplitude, size=(cells, m))
        if complex_states:
            vals = vals + 1j * rng.uniform(-amplitude, amplitude, size=(cells, m))
        u = PiecewiseConstantInput(np.linspace(t0, t1, cells + 1), vals)
        out.append(dissipation_trial(sys, cand, t0, t1, x0, u, i, tol_rel))
    ok = [t for t in out if t.status == "ok"]
    worst = min((t.slack for t in ok), default=float("nan"))
    if any(t.violated for t in out):
        verdict = "violated"
    elif len(ok) < len(out):
        verdict = "inconclusive"
    else:
        verdict = "holds"
    zero = all(_quad(cand.Q, t, np.zeros(n)) == 0.0 for t in (a, b))
    return DissipationReport(verdict, out, float(worst), seed, zero, bool(cand.psd),
                             f"slack >= -{tol_rel:g} * (1 + |rhs|)")


@dataclass
class SupplyVerdict:
    """Outcome of the pointwise test; ``holds`` is a sufficient certificate only."""

    holds: bool
    max_eig: float
    worst_time: float
    tolerance: float
    jumps_decreasing: bool
    nodes: int
    note: str = "sufficient condition only; failure does not imply non-passivity"

    def to_dict(self):
        return asdict(self)


def supply_matrix(Qv, dQ, A, B, C, D):
    """``[[Q' + A*Q + QA, QB - C*], [B*Q - C, -(D + D*)]]`` batched over time."""
    top = np.concatenate([dQ + conj_t(A) @ Qv + Qv @ A, Qv @ B - conj_t(C)], axis=-1)
    bot = np.concatenate([conj_t(B) @ Qv - C, -(D + conj_t(D))], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def _one_sided_all(sys, f, times, side):
    getter = "left_limit" if side < 0 else "right_limit"
    mats = [getattr(g, getter)(times) for g in (f, sys.A, sys.B, sys.C, sys.D)]
    dQ = f.one_sided_derivative(times, side)
    return mats[0], dQ, mats[1:]


def pointwise_supply_check(sys: LtvSystem, Q, grid=None, tol=None) -> SupplyVerdict:
    """``lambda_max(W(t)) <= tol`` on the grid plus decreasing jumps of ``Q``.

    At breakpoints ``W`` is assembled twice, from left and right limits and
    one-sided derivatives.
    """
    cand = _candidate(Q)
    _check_pair(sys, cand)
    f = cand.Q
    a = max(sys.interval[0], f.interval[0])
    b = min(sys.interval[1], f.interval[1])
    bps = np.unique(np.concatenate([sys.breakpoints, f.breakpoints]))
    if grid is None:
        grid = make_grid((a, b), 401, bps)
    grid = np.unique(np.concatenate([np.asarray(grid, dtype=float), bps[(bps > a) & (bps < b)]]))
    inner = grid[~np.isin(grid, bps)]
    Ws, ts = [], []
    if inner.size:
        Ws.append(supply_matrix(f.evaluate(inner), f.derivative(inner), sys.A.evaluate(inner),
                                sys.B.evaluate(inner), sys.C.evaluate(inner), sys.D.evaluate(inner)))
        ts.append(inner)
    on = grid[np.isin(grid, bps)]
    for side in (-1, 1):
        if on.size:
            Qv, dQ, (A, B, C, D) = _one_sided_all(sys, f, on, side)
            Ws.append(supply_matrix(Qv, dQ, A, B, C, D))
            ts.append(on)
    W = np.concatenate(Ws)
    times = np.concatenate(ts)
    herm = np.linalg.norm(W - conj_t(W), 2, axis=(1, 2))
    eig = max_eig(W)
    scale = float(np.max(np.linalg.norm(W, 2, axis=(1, 2))))
    tol = 1e-9 * (1.0 + scale) if tol is None else float(tol)
    if herm.max() > 1e-8 * (1.0 + scale):
        raise NotHermitian(f"supply matrix is not Hermitian (residual {herm.max():.3g})")
    k = int(np.argmax(eig))
    jumps = auc_check(cand, grid).jump_verdicts
    jumps_ok = all(j.decreasing for j in jumps)
    return SupplyVerdict(bool(eig[k] <= tol and jumps_ok), float(eig[k]), float(times[k]), tol,
                         jumps_ok, int(times.size))


@dataclass
class KernelRecord:
    time: float
    side: int
    kernel_dim: int
    residual_qa: float
    residual_c: float


@dataclass
class KernelConditionReport:
    """Kernel inclusion residuals; ``passed`` iff every residual is within ``tol * scale``."""

    passed: bool
    records: list
    tolerance: float
    scale: float
    witness: KernelRecord | None = None
    message: str = ""

    @property
    def max_residual(self):
        return max((max(r.residual_qa, r.residual_c) for r in self.records), default=0.0)

    def to_dict(self):
        return {"passed": self.passed, "tolerance": self.tolerance, "scale": self.scale,
                "max_residual": self.max_residual, "message": self.message,
                "witness": None if self.witness is None else asdict(self.witness),
                "records": [asdict(r) for r in self.records if r.kernel_dim > 0]}


def _kernel_dim(M, thr):
    return int(M.shape[-1] - np.sum(np.linalg.svd(M, compute_uv=False) > thr))


def kernel_condition_check(sys: LtvSystem, Q, grid=None, tol: float = 1e-8,
                           rank_tol=None) -> KernelConditionReport:
    """Test ``ker Q(t) <= ker(Q(t)A(t) + Q'(t)) & ker C(t)`` on a grid.

    The inclusion is required almost everywhere, so at an isolated node the
    kernel dimension is taken from the smaller of the neighbouring interior
    kernels (``t -/+ delta``); the basis is the matching set of eigenvectors
    of ``Q(t)`` with the smallest eigenvalues.  At breakpoints the same is
    done separately with left and right limits and one-sided derivatives.
    """
    cand = _candidate(Q)
    _check_pair(sys, cand)
    f = cand.Q
    a = max(sys.interval[0], f.interval[0])
    b = min(sys.interval[1], f.interval[1])
    bps = np.unique(np.concatenate([sys.breakpoints, f.breakpoints]))
    if grid is None:
        grid = make_grid((a, b), 401, bps)
    grid = np.unique(np.concatenate([np.asarray(grid, dtype=float), bps[(bps > a) & (bps < b)]]))
    _, _, chain_vals = f.chain(grid)
    smax = float(np.max(np.linalg.svd(chain_vals, compute_uv=False)[..., 0])) if chain_vals.size else 0.0
    thr = rank_threshold(smax, sys.n) if rank_tol is None else float(rank_tol)
    scale = max(1.0, smax)
    delta = 1e-6 * (b - a)
    records = []

    def probe(t, side):
        # interior kernel dimension next to t on the requested side(s)
        dims = []
        if side <= 0 and t - delta >= a:
            dims.append(_kernel_dim(f.evaluate(t - delta), thr))
        if side >= 0 and t + delta <= b:
            dims.append(_kernel_dim(f.evaluate(t + delta), thr))
        return min(dims) if dims else 0

    for t in grid:
        if t in bps:
            sides = [s for s in (-1, 1) if (s < 0 and t > a) or (s > 0 and t < b)]
        else:
            sides = [0]
        for side in sides:
            if side == 0:
                Qt, dQ = f.evaluate(t), f.derivative(t)
                At, Ct = sys.A.evaluate(t), sys.C.evaluate(t)
                d = min(_kernel_dim(Qt, thr), probe(t, 0))
            else:
                Qt, dQ, (At, _, Ct, _) = _one_sided_all(sys, f, np.array([t]), side)
                Qt, dQ, At, Ct = Qt[0], dQ[0], At[0], Ct[0]
                d = probe(t, side)
            if d == 0:
                records.append(KernelRecord(float(t), side, 0, 0.0, 0.0))
                continue
            _, vecs = np.linalg.eigh(0.5 * (Qt + conj_t(Qt)))
            Vk = vecs[:, :d]
            rqa = float(np.max(np.linalg.norm((Qt @ At + dQ) @ Vk, axis=0)))
            rc = float(np.max(np.linalg.norm(Ct @ Vk, axis=0)))
            records.append(KernelRecord(float(t), side, d, rqa, rc))
    limit = tol * scale
    bad = [r for r in records if max(r.residual_qa, r.residual_c) > limit]
    witness = max(bad, key=lambda r: max(r.residual_qa, r.residual_c)) if bad else None
    if witness is None:
        msg = "kernel inclusion holds at all nodes"
    else:
        part = "C v" if witness.residual_c > limit else "(QA + Q')v"
        msg = (f"kernel inclusion fails at t = {witness.time} ({part} nonzero); "
               "Q cannot define a storage function for this system")
    return KernelConditionReport(not bad, records, tol, scale, witness, msg)


@dataclass
class AuditReport:
    """First failing necessary condition, in the fixed order auc, flow, kernel, rank."""

    passed: bool
    failed_stage: str | None
    stages: dict = field(default_factory=dict)

    def to_dict(self):
        return {"passed": self.passed, "failed_stage": self.failed_stage, "stages": self.stages}


def storage_regularity_audit(Q, sys: LtvSystem, grid=None, t0=None, tol_psd=None,
                             tol_rank=None) -> AuditReport:
    """Battery of necessary conditions for ``Q`` to define a storage of ``sys``.

    Stages: (a) ``auc`` jump and integral test; (b) ``flow``: ``X* Q X``
    weakly decreasing; (c) ``kernel`` inclusion; (d) ``rank`` monotonicity of
    the transported candidate.  Stops at the first failure.  ``tol_psd``
    overrides the Loewner tolerances of (a) and (b), ``tol_rank`` the rank
    threshold of (d).
    """
    cand = _candidate(Q)
    _check_pair(sys, cand)
    a = max(sys.interval[0], cand.interval[0])
    b = min(sys.interval[1], cand.interval[1])
    bps = np.unique(np.concatenate([sys.breakpoints, cand.breakpoints]))
    if grid is None:
        grid = make_grid((a, b), 401, bps)
    grid = np.asarray(grid, dtype=float)
    stages = {}
    auc = auc_check(cand, grid, tol_psd)
    stages["auc"] = auc.to_dict()
    if not auc.ok:
        return AuditReport(False, "auc", stages)
    fsol = fundamental_solution(sys, a if t0 is None else float(t0), (a, b))
    Qx = q_along_flow(cand, fsol, grid)
    mono = check_weak_decrease(Qx, grid, tol_psd)
    stages["flow"] = mono.to_dict()
    if not mono.decreasing:
        return AuditReport(False, "flow", stages)
    kern = kernel_condition_check(sys, cand, grid)
    stages["kernel"] = kern.to_dict()
    if not kern.passed:
        return AuditReport(False, "kernel", stages)
    try:
        prof = rank_profile(Qx, grid, tol_rank, transported=True)
        stages["rank"] = prof.to_dict()
    except NonMonotoneRank as exc:
        stages["rank"] = {"error": str(exc)}
        return AuditReport(False, "rank", stages)
    return AuditReport(True, None, stages)


@dataclass
class AdversarialResult:
    found: bool
    lam: float | None
    trial: Trial | None
    alpha: complex
    scanned: list


def adversarial_violation(sys: LtvSystem, Q, t0: float, t1: float, k_max: int = 12,
                          rank_tol=None) -> AdversarialResult:
    """Input built to break the dissipation inequality when the kernel condition fails.

    With ``V0`` a kernel basis of ``Q(t0)`` and ``V = X V0``, choose ``v0``
    and ``u0`` with ``alpha = u0* int C V v0 != 0``, start at
    ``x0 = lam * conj(alpha) * V0 v0`` and hold ``u = u0``.  The supply is
    affine in ``lam`` with slope ``|alpha|^2`` while the storage change stays
    bounded (or grows quadratically when ``Q V`` does not vanish), so
    ``lam = -10^k`` eventually violates the inequality.  The scan stops at
    ``k_max``; no violation by then is reported as not found.
    """
    cand = _candidate(Q)
    f = cand.Q
    Q0 = f.evaluate(t0)
    smax = float(np.linalg.norm(Q0, 2))
    thr = rank_threshold(max(smax, cand.norm), sys.n) if rank_tol is None else float(rank_tol)
    d = _kernel_dim(Q0, thr)
    if d == 0:
        return AdversarialResult(False, None, None, 0j, [])
    _, vecs = np.linalg.eigh(0.5 * (Q0 + conj_t(Q0)))
    V0 = vecs[:, :d]
    fsol = fundamental_solution(sys, t0, (t0, t1))
    cuts = np.unique(np.concatenate([[t0, t1], sys.cuts(t0, t1)]))
    W = np.zeros((sys.m, d), dtype=complex)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        s = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
        Cs = sys.C.segments[sys.C._index_right(0.5 * (lo + hi))].value(s)
        vals = Cs @ fsol.X.evaluate(s) @ V0
        W += 0.5 * (hi - lo) * np.tensordot(_GL_WEIGHTS, vals, axes=1)
    _, sv, vh = np.linalg.svd(W)
    v0 = conj_t(vh)[:, 0]
    u0 = W @ v0
    if sv[0] <= 1e-12:
        u0 = np.zeros(sys.m, dtype=complex)
    alpha = complex(np.vdot(u0, W @ v0))
    scanned = []
    for k in range(k_max + 1):
        lam = -(10.0 ** k)
        x0 = lam * np.conj(alpha) * (V0 @ v0) if abs(alpha) > 0 else lam * (V0 @ v0)
        trial = dissipation_trial(sys, cand, t0, t1, x0, u0, k)
        scanned.append((lam, trial.slack))
        if trial.violated:
            return AdversarialResult(True, lam, trial, alpha, scanned)
    return AdversarialResult(False, None, None, alpha, scanned)


def random_passive_lti(rng, n: int, m: int, interval=(0.0, 2.0), complex_valued=False):
    """Port-Hamiltonian system with quadratic storage ``Q``; ``W = diag(-2QRQ, -2S)``.

    Returns ``(sys, Q)`` with ``A = (J - R) Q``, ``C = B* Q`` and
    ``D = S + N`` where ``S >= 0`` and ``N`` is skew-Hermitian.
    """
    def rnd(*shape):
        z = rng.normal(size=shape)
        return z + 1j * rng.normal(size=shape) if complex_valued else z

    G = rnd(n, n)
    Qm = G @ conj_t(G) / n + 0.5 * np.eye(n)
    J = rnd(n, n)
    J = J - conj_t(J)
    Rf = rnd(n, n)
    R = Rf @ conj_t(Rf) / n
    B = rnd(n, m)
    Sf = rnd(m, m)
    S = Sf @ conj_t(Sf) / (2 * m)
    N = rnd(m, m)
    N = 0.5 * (N - conj_t(N))
    A = (J - R) @ Qm
    C = conj_t(B) @ Qm
    D = S + N
    c = PiecewiseMatrixFunction.constant
    sys = LtvSystem(c(A, interval), c(B, interval), c(C, interval), c(D, interval), "random-ph")
    return sys, c(Qm, interval)
