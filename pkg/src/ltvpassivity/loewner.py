"""Loewner-order checks for Hermitian matrix functions.

Weak decrease means ``Q(r) - Q(s) >= 0`` (positive semidefinite) whenever
``r <= s``.  Because the Loewner order is transitive it suffices to test
adjacent pairs of a grid, provided one-sided limits are inserted at every
breakpoint.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NotAUC, NotHermitian, ShapeMismatch
from .matfun import (ExpressionSegment, PiecewiseMatrixFunction, conj_t, congruence_fn,
                     make_grid)

__all__ = [
    "StorageCandidate", "Witness", "JumpVerdict", "MonotonicityReport", "AucVerdict",
    "check_weak_decrease", "auc_check", "congruence", "q_along_flow",
    "right_continuous_representative", "min_eig", "tau_psd", "tau_herm",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def tau_psd(norm: float) -> float:
    return 1e-9 * (1.0 + norm)


def tau_herm(norm: float) -> float:
    return 1e-10 * norm


def hermitian_part(M):
    return 0.5 * (M + conj_t(M))


def min_eig(M) -> np.ndarray:
    """Smallest eigenvalue of the Hermitian part, batched over leading axes."""
    return np.linalg.eigvalsh(hermitian_part(np.asarray(M)))[..., 0]


def max_eig(M) -> np.ndarray:
    return np.linalg.eigvalsh(hermitian_part(np.asarray(M)))[..., -1]


def default_grid(f: PiecewiseMatrixFunction, n: int = 401) -> np.ndarray:
    return make_grid(f.interval, n, np.concatenate([f.breakpoints, f.kinks]))


def _with_breakpoints(f, grid):
    grid = np.asarray(grid, dtype=float)
    lo, hi = grid.min(), grid.max()
    bps = f.breakpoints
    return np.unique(np.concatenate([grid, bps[(bps > lo) & (bps < hi)]]))


class StorageCandidate:
    """Hermitian matrix function proposed as a quadratic storage ``x* Q x / 2``.

    Parameters
    ----------
    Q : PiecewiseMatrixFunction
        Square, pointwise Hermitian.
    grid : array_like, optional
        Validation nodes (breakpoints are added).
    tol_psd, tol_herm : float, optional
        Override the default tolerances, which scale with ``max |Q|``.

    Raises
    ------
    ShapeMismatch
        If ``Q`` is not square.
    NotHermitian
        If the Hermitian residual exceeds ``tol_herm`` at a validation node.
    """

    def __init__(self, Q: PiecewiseMatrixFunction, grid=None, tol_psd=None, tol_herm=None):
        if Q.shape[0] != Q.shape[1]:
            raise ShapeMismatch(f"storage matrix must be square, got {Q.shape}")
        self.Q = Q
        self.n = Q.shape[0]
        grid = default_grid(Q, 201) if grid is None else _with_breakpoints(Q, grid)
        times, sides, vals = Q.chain(grid)
        self.norm = float(np.max(np.linalg.norm(vals, 2, axis=(1, 2))))
        self.tol_psd = tau_psd(self.norm) if tol_psd is None else float(tol_psd)
        self.tol_herm = tau_herm(self.norm) if tol_herm is None else float(tol_herm)
        resid = np.linalg.norm(vals - conj_t(vals), 2, axis=(1, 2))
        k = int(np.argmax(resid))
        if resid[k] > self.tol_herm:
            raise NotHermitian(f"|Q - Q*| = {resid[k]:.3g} at t = {times[k]}")
        self.hermitian_residual = float(resid[k])
        eigs = min_eig(vals)
        self.min_eigenvalue = float(eigs.min())
        self.min_eigenvalue_time = float(times[int(np.argmin(eigs))])
        self.psd = self.min_eigenvalue >= -self.tol_psd
        self.validation_grid = grid

    @property
    def interval(self):
        return self.Q.interval

    @property
    def breakpoints(self):
        return self.Q.breakpoints

    @property
    def jump_table(self):
        return self.Q.jump_records()

    def singular_part(self) -> PiecewiseMatrixFunction:
        """Running sum of jumps; piecewise constant, zero at the start of the interval."""
        a, b = self.interval
        n = self.n
        acc = np.zeros((n, n), dtype=complex)
        cuts = [a] + list(self.breakpoints) + [b]
        segs, points = [], {}
        records = self.jump_table
        for k, (lo, hi) in enumerate(zip(cuts[:-1], cuts[1:])):
            if k > 0:
                rec = records[k - 1]
                points[rec.time] = acc + rec.left_jump
                acc = acc + (rec.right_limit - rec.left_limit)
            segs.append(ExpressionSegment(lo, hi, acc.tolist(), validate=False))
        return PiecewiseMatrixFunction(segs, points)

    def ac_part(self) -> PiecewiseMatrixFunction:
        """``Q - Q_s``; continuous across every breakpoint."""
        return PiecewiseMatrixFunction.combine(
            [self.Q, self.singular_part()], lambda q, s: q - s,
            lambda vals, ders: ders[0] - ders[1])

    def __repr__(self):
        return f"StorageCandidate(n={self.n}, interval={self.interval}, psd={self.psd})"


def _as_candidate(Q, grid=None):
    if isinstance(Q, StorageCandidate):
        return Q
    return StorageCandidate(Q, grid)


@dataclass(frozen=True)
class Witness:
    """Pair ``r <= s`` with ``lambda_min(Q(r) - Q(s)) = min_eig < -tol``.

    ``kind`` is ``"pair"`` for grid neighbours, ``"jump"`` when the pair
    straddles a breakpoint via one-sided limits, and ``"differential"`` when
    ``-Q'(r)`` has a negative eigenvalue (then ``r == s``).
    """

    r: float
    s: float
    min_eig: float
    kind: str = "pair"
    r_side: int = 0
    s_side: int = 0


@dataclass(frozen=True)
class JumpVerdict:
    time: float
    left_min_eig: float
    right_min_eig: float
    decreasing: bool


@dataclass
class MonotonicityReport:
    verdict: str
    witnesses: list
    jump_verdicts: list
    tolerance: float
    grid_nodes: int
    grid_spacing: float
    differential_checked: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def decreasing(self) -> bool:
        return self.verdict == "weakly-decreasing"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "witnesses": [asdict(w) for w in self.witnesses],
            "jump_verdicts": [asdict(j) for j in self.jump_verdicts],
            "tolerance": self.tolerance,
            "grid_nodes": self.grid_nodes,
            "grid_spacing": self.grid_spacing,
            "differential_checked": self.differential_checked,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _jump_verdicts(Q: PiecewiseMatrixFunction, grid, tol):
    lo, hi = np.min(grid), np.max(grid)
    out = []
    for rec in Q.jump_records():
        if not lo < rec.time < hi:
            continue
        le = float(min_eig(-rec.left_jump))
        ri = float(min_eig(-rec.right_jump))
        out.append(JumpVerdict(rec.time, le, ri, le >= -tol and ri >= -tol))
    return out


def check_weak_decrease(Q, grid=None, tol=None, differential=True) -> MonotonicityReport:
    """Adjacent-pair and differential test of weak Loewner decrease.

    Parameters
    ----------
    Q : StorageCandidate or PiecewiseMatrixFunction
    grid : array_like, optional
        Sample times; breakpoints inside its span are always added.
    tol : float, optional
        Defaults to the candidate's PSD tolerance.
    differential : bool
        Also require ``-Q'(t) >= -tol`` at cell midpoints.

    Returns
    -------
    MonotonicityReport
        Witnesses are sorted by time.
    """
    cand = _as_candidate(Q, grid)
    f = cand.Q
    grid = default_grid(f) if grid is None else _with_breakpoints(f, grid)
    tol = cand.tol_psd if tol is None else float(tol)
    times, sides, vals = f.chain(grid)
    diffs = min_eig(vals[:-1] - vals[1:])
    witnesses = []
    for k in np.nonzero(diffs < -tol)[0]:
        kind = "jump" if times[k] == times[k + 1] else "pair"
        witnesses.append(Witness(float(times[k]), float(times[k + 1]), float(diffs[k]), kind,
                                 int(sides[k]), int(sides[k + 1])))
    checked = 0
    if differential:
        mids = 0.5 * (grid[:-1] + grid[1:])
        mids = mids[~np.isin(mids, f.breakpoints)]
        if mids.size:
            d = f.derivative(mids)
            dmin = min_eig(-d)
            dtol = max(tol, tau_psd(float(np.max(np.linalg.norm(d, 2, axis=(1, 2))))))
            checked = int(mids.size)
            for k in np.nonzero(dmin < -dtol)[0]:
                witnesses.append(Witness(float(mids[k]), float(mids[k]), float(dmin[k]),
                                         "differential"))
    witnesses.sort(key=lambda w: (w.r, w.s, w.kind))
    jumps = _jump_verdicts(f, grid, tol)
    verdict = "violated" if witnesses else "weakly-decreasing"
    return MonotonicityReport(verdict, witnesses, jumps, tol, int(grid.size),
                              float(np.max(np.diff(grid))), checked)


@dataclass
class AucVerdict:
    """Outcome of :func:`auc_check`; ``ok`` iff no jump or integral violation."""

    ok: bool
    jump_verdicts: list
    integral_violations: list
    tolerance: float

    def to_dict(self):
        return {"ok": self.ok, "tolerance": self.tolerance,
                "jump_verdicts": [asdict(j) for j in self.jump_verdicts],
                "integral_violations": [list(v) for v in self.integral_violations]}


def _integral_of_derivative(f, lo, hi):
    seg = f.segments[f._index_right(0.5 * (lo + hi))]
    s = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
    return 0.5 * (hi - lo) * np.tensordot(_GL_WEIGHTS, seg.derivative(s), axes=1)


def auc_check(Q, grid=None, tol=None) -> AucVerdict:
    """Test for an absolutely continuous part plus a decreasing jump part.

    Checks (a) every jump ``Q(t) - Q(t-)`` and ``Q(t+) - Q(t)`` is ``<= tol I``
    and (b) ``Q(s) - Q(r) <= int_r^s Q' dt + tol I`` on adjacent grid pairs,
    with Gauss-Legendre quadrature of the derivative on smooth cells.
    """
    cand = _as_candidate(Q, grid)
    f = cand.Q
    grid = default_grid(f) if grid is None else _with_breakpoints(f, grid)
    grid = np.unique(np.concatenate([grid, f.kinks[(f.kinks > grid[0]) & (f.kinks < grid[-1])]]))
    tol = cand.tol_psd if tol is None else float(tol)
    jumps = _jump_verdicts(f, grid, tol)
    vals = f.evaluate(grid)
    bad = []
    for k, (r, s) in enumerate(zip(grid[:-1], grid[1:])):
        lhs = vals[k + 1] - vals[k] - _integral_of_derivative(f, r, s)
        top = float(max_eig(lhs))
        if top > tol:
            bad.append((float(r), float(s), top))
    ok = all(j.decreasing for j in jumps) and not bad
    return AucVerdict(ok, jumps, bad, tol)


def congruence(Q, V: PiecewiseMatrixFunction, grid=None) -> StorageCandidate:
    """``V* Q V`` as a new candidate (jump table recomputed from the composite)."""
    cand = _as_candidate(Q)
    if V.shape[0] != cand.n:
        raise ShapeMismatch(f"V has {V.shape[0]} rows, Q is {cand.n} x {cand.n}")
    return StorageCandidate(congruence_fn(V, cand.Q), grid)


def q_along_flow(Q, fsol, grid=None) -> StorageCandidate:
    """``X(t)* Q(t) X(t)`` for a fundamental solution ``fsol``."""
    return congruence(Q, fsol.X, grid)


def right_continuous_representative(Q, grid=None) -> StorageCandidate:
    """Replace every breakpoint value by the right limit.

    Raises
    ------
    NotAUC
        If :func:`auc_check` fails.
    """
    cand = _as_candidate(Q, grid)
    verdict = auc_check(cand, grid)
    if not verdict.ok:
        raise NotAUC("candidate is not absolutely continuous up to decreasing jumps")
    # half-open ownership already yields the right limit once overrides are dropped
    return StorageCandidate(cand.Q.without_points(), grid,
                            tol_psd=cand.tol_psd, tol_herm=cand.tol_herm)
