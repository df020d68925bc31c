"""Rank profiles, kernel chains and null space decompositions of storage matrices.

For a weakly decreasing ``Q`` the kernels only grow in time, so one constant
basis ``V0 = [v_n, ..., v_1]`` exposes every kernel as trailing columns:
``V0* Q(t) V0 = diag(Q11(t), 0)``.  Transporting along the flow ``X`` extends
this to storages of ``x' = A x`` via ``V = X V0``, and a QL factorization
``V = U L`` gives a pointwise unitary variant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ChainViolation, NearSingular, NonMonotoneRank, NotStorage, ShapeMismatch
from .loewner import (StorageCandidate, check_weak_decrease, congruence, default_grid, min_eig,
                      q_along_flow, _with_breakpoints)
from .matfun import PiecewiseMatrixFunction, conj_t, make_grid, product_fn
from .odeflow import RTOL, LtvSystem, fundamental_solution

__all__ = [
    "RankProfile", "KernelChain", "NsdResult", "rank_threshold", "rank_profile",
    "kernel_chain", "nsd_constant", "nsd_flow", "nsd_unitary", "ql", "ql_factorization",
    "certify_unitary_nsd",
]

LEFT, POINT, RIGHT = -1, 0, 1


def rank_threshold(sigma_max: float, n: int, transported: bool = False, rtol: float = RTOL) -> float:
    """Singular values at or below this count as zero.

    The base rule is ``n * eps * sigma_max``.  Matrices produced by numerical
    integration carry errors near the integrator tolerance, so transported
    contexts use ``max(base, 10 * rtol * sigma_max)``.
    """
    base = n * np.finfo(float).eps * sigma_max
    return max(base, 10.0 * rtol * sigma_max) if transported else base


def _f(Q):
    return Q.Q if isinstance(Q, StorageCandidate) else Q


def _ranks(vals, thr):
    sv = np.linalg.svd(vals, compute_uv=False)
    return np.sum(sv > thr, axis=-1)


def _null_space(M, thr):
    _, s, vh = np.linalg.svd(M)
    s = np.concatenate([s, np.zeros(M.shape[1] - s.size)])
    return conj_t(vh)[:, s <= thr]


@dataclass
class RankProfile:
    """Numerical rank of ``Q`` along time.

    Attributes
    ----------
    drop_times : ndarray
        Sorted times where the rank falls.
    intervals : list of (lo, hi, rank)
        Rank on each open interval between consecutive drops.
    one_sided : list of (t, rank_left, rank_point, rank_right)
        Ranks at each drop.
    threshold : float
        Absolute singular-value threshold.
    """

    drop_times: np.ndarray
    intervals: list
    one_sided: list
    threshold: float
    resolution: float
    method: str = "svd-threshold"
    chain_times: np.ndarray = field(default=None, repr=False)
    chain_sides: np.ndarray = field(default=None, repr=False)
    chain_ranks: np.ndarray = field(default=None, repr=False)

    def sequence(self):
        """Interleaved ranks ``r(I_0), r(t_1-), r(t_1), r(t_1+), r(I_1), ...``."""
        out = [self.intervals[0][2]]
        for (t, rl, rp, rr), iv in zip(self.one_sided, self.intervals[1:]):
            out += [rl, rp, rr, iv[2]]
        return out

    def to_dict(self):
        return {"drop_times": [float(t) for t in self.drop_times],
                "intervals": [[float(a), float(b), int(r)] for a, b, r in self.intervals],
                "one_sided": [[float(t), int(a), int(b), int(c)] for t, a, b, c in self.one_sided],
                "threshold": float(self.threshold), "resolution": float(self.resolution), "method": self.method}


def _global_scale(f, grid):
    _, _, vals = f.chain(grid)
    return float(np.max(np.linalg.svd(vals, compute_uv=False)[..., 0])) if vals.size else 0.0


def rank_profile(Q, grid=None, tol=None, resolution=None, transported=False) -> RankProfile:
    """Rank profile with drops located by bisection.

    Parameters
    ----------
    Q : StorageCandidate or PiecewiseMatrixFunction
        Weakly decreasing (after transport) Hermitian function.
    grid : array_like, optional
        Breakpoints are added.
    tol : float, optional
        Absolute rank threshold; defaults to :func:`rank_threshold` of the
        largest singular value on the grid.
    resolution : float, optional
        Bisection stops at this width; default ``1e-6 * |interval|``.

    Raises
    ------
    NonMonotoneRank
        If the rank increases along the time-ordered chain.
    """
    f = _f(Q)
    grid = default_grid(f) if grid is None else _with_breakpoints(f, grid)
    n = f.shape[0]
    thr = rank_threshold(_global_scale(f, grid), n, transported) if tol is None else float(tol)
    a, b = grid[0], grid[-1]
    res = 1e-6 * (b - a) if resolution is None else float(resolution)
    times, sides, vals = f.chain(grid)
    ranks = _ranks(vals, thr)
    up = np.nonzero(np.diff(ranks) > 0)[0]
    if up.size:
        k = up[0]
        raise NonMonotoneRank(
            f"rank rises from {ranks[k]} to {ranks[k + 1]} between t = {times[k]} and {times[k + 1]}")

    def rank_at(t):
        return int(_ranks(f.evaluate(np.array([t])), thr)[0])

    def bisect(lo, rlo, hi, rhi):
        if rlo == rhi:
            return []
        if rlo < rhi:
            raise NonMonotoneRank(f"rank rises inside ({lo}, {hi})")
        if hi - lo <= res:
            return [hi]
        mid = 0.5 * (lo + hi)
        rm = rank_at(mid)
        return bisect(lo, rlo, mid, rm) + bisect(mid, rm, hi, rhi)

    drops = []
    for k in range(len(times) - 1):
        if ranks[k + 1] < ranks[k]:
            if times[k] == times[k + 1]:
                drops.append(float(times[k]))
            else:
                drops += bisect(times[k], ranks[k], times[k + 1], ranks[k + 1])
    drops = np.unique(np.array(drops, dtype=float))

    one_sided = []
    for t in drops:
        if f.is_breakpoint(t):
            rec = f.one_sided_limits(t)
            rl, rp, rr = (int(x) for x in _ranks(np.stack([rec.left_limit, rec.point_value,
                                                            rec.right_limit]), thr))
        else:
            rl = rank_at(max(a, t - res))
            rp = rank_at(t)
            rr = rank_at(min(b, t + res)) if t < b else rp
        one_sided.append((float(t), rl, rp, rr))
    cuts = np.concatenate([[a], drops, [b]])
    intervals = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        intervals.append((float(lo), float(hi), rank_at(0.5 * (lo + hi)) if hi > lo else rank_at(lo)))
    prof = RankProfile(drops, intervals, one_sided, thr, res,
                       chain_times=times, chain_sides=sides, chain_ranks=ranks)
    seq = prof.sequence()
    if any(x < y for x, y in zip(seq, seq[1:])):
        raise NonMonotoneRank(f"interleaved rank sequence {seq} is not weakly decreasing")
    return prof


@dataclass
class KernelChain:
    """Nested orthonormal kernel bases and their completion.

    ``bases[0]`` is the kernel on the first constant-rank interval (possibly
    empty); each later ``bases[k]`` extends its predecessor by at least one
    vector.  ``vectors`` holds ``v_1, ..., v_n`` as columns: kernel vectors in
    order of appearance, then the completion.
    """

    bases: list
    stage_times: list
    vectors: np.ndarray
    max_residual: float
    merged: int = 0

    @property
    def sizes(self):
        """Dimensions of the nested bases followed by ``n`` for the completion."""
        out = [b.shape[1] for b in self.bases]
        n = self.vectors.shape[0]
        return out + [n] if out[-1] < n else out


def _stages(f, profile):
    """Representative (time, side, matrix) in chain order: interval, then t-, t, t+ per drop."""
    out = []
    ivs = profile.intervals
    res = profile.resolution
    a, b = ivs[0][0], ivs[-1][1]

    def mid(iv):
        lo, hi, _ = iv
        return 0.5 * (lo + hi)

    out.append((mid(ivs[0]), POINT, f.evaluate(mid(ivs[0]))))
    for (t, *_), iv in zip(profile.one_sided, ivs[1:]):
        if f.is_breakpoint(t):
            rec = f.one_sided_limits(t)
            out += [(t, LEFT, rec.left_limit), (t, POINT, rec.point_value), (t, RIGHT, rec.right_limit)]
        else:
            out += [(t, LEFT, f.evaluate(max(a, t - res))), (t, POINT, f.evaluate(t))]
            if t < b:
                out.append((t, RIGHT, f.evaluate(min(b, t + res))))
        out.append((mid(iv), POINT, f.evaluate(mid(iv))))
    return out


def kernel_chain(Q, profile: RankProfile, tol=None, grid=None) -> KernelChain:
    """Nested kernel bases at the stages of ``profile``.

    Each stage must annihilate every earlier basis vector up to ``tol``
    (default: the profile threshold), also at the chain nodes recorded in the
    profile.  Stages that add no dimension are merged into their predecessor.

    Raises
    ------
    ChainViolation
        With the offending time and residual.
    """
    f = _f(Q)
    n = f.shape[0]
    thr = profile.threshold
    tol = max(thr, 1e-300) if tol is None else float(tol)
    basis = np.zeros((n, 0), dtype=complex)
    bases, stage_times = [], []
    merged = 0
    worst = 0.0
    for t, side, M in _stages(f, profile):
        if basis.shape[1]:
            r = float(np.max(np.linalg.norm(M @ basis, axis=0)))
            worst = max(worst, r)
            if r > tol:
                raise ChainViolation(
                    f"earlier kernel vector leaves the kernel at t = {t} (side {side}): residual {r:.3g}",
                    time=t, residual=r)
        N = _null_space(M, thr)
        extra = N.shape[1] - basis.shape[1]
        if not bases and extra == 0:
            bases.append(basis.copy())
            stage_times.append((float(t), int(side)))
            continue
        if extra <= 0:
            merged += 1
            continue
        P = N - basis @ (conj_t(basis) @ N)
        u, s, _ = np.linalg.svd(P, full_matrices=False)
        basis = np.hstack([basis, u[:, :extra]])
        bases.append(basis.copy())
        stage_times.append((float(t), int(side)))
    if profile.chain_times is not None and basis.shape[1]:
        # later grid nodes must annihilate every basis that had appeared by then
        _, _, vals = f.chain(profile.chain_times)
        for B, (ts, sd) in zip(bases, stage_times):
            later = (profile.chain_times > ts) | ((profile.chain_times == ts) & (profile.chain_sides >= sd))
            if np.any(later) and B.shape[1]:
                res = np.linalg.norm(vals[later] @ B, axis=1).max(axis=-1)
                k = int(np.argmax(res))
                worst = max(worst, float(res[k]))
                if res[k] > tol:
                    tk = float(profile.chain_times[later][k])
                    raise ChainViolation(
                        f"kernel vector from t = {ts} not in kernel at t = {tk}: residual {res[k]:.3g}",
                        time=tk, residual=float(res[k]))
    # completion to a unitary basis
    if basis.shape[1] < n:
        comp = _null_space(conj_t(basis), 0.5) if basis.shape[1] else np.eye(n, dtype=complex)
        full = np.hstack([basis, comp[:, : n - basis.shape[1]]])
    else:
        full = basis
    return KernelChain(bases, stage_times, full, worst, merged)


def ql(M, tol=1e-12):
    """QL factorization ``M = U L`` by reverse modified Gram-Schmidt.

    ``U`` is unitary and ``L`` lower triangular with positive real diagonal.

    Raises
    ------
    NearSingular
        If a column is dependent on later ones up to ``tol * |M|``.
    """
    M = np.asarray(M, dtype=complex)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ShapeMismatch(f"QL needs a square matrix, got {M.shape}")
    U = np.zeros_like(M)
    L = np.zeros_like(M)
    scale = max(np.linalg.norm(M, 2), 1e-300)
    for j in range(n - 1, -1, -1):
        v = M[:, j].copy()
        for _ in range(2):
            for k in range(j + 1, n):
                c = np.vdot(U[:, k], v)
                L[k, j] += c
                v -= c * U[:, k]
        nv = np.linalg.norm(v)
        if nv <= tol * scale:
            raise NearSingular(f"column {j} is numerically dependent (norm {nv:.3g})")
        L[j, j] = nv
        U[:, j] = v / nv
    return U, L


def ql_factorization(V: PiecewiseMatrixFunction, grid=None, tol=1e-12, sides=None):
    """Pointwise QL of ``V``; returns ``(times, sides, U, L)`` samples.

    Without ``sides`` the samples follow ``V.chain(grid)``; with ``sides``
    the pairs ``(grid[k], sides[k])`` are used as given.
    """
    if sides is None:
        grid = default_grid(V) if grid is None else _with_breakpoints(V, grid)
        times, sides, vals = V.chain(grid)
    else:
        times = np.asarray(grid, dtype=float)
        sides = np.asarray(sides, dtype=int)
        vals = V.sample(times, sides)
    Us = np.empty_like(vals)
    Ls = np.empty_like(vals)
    for k, M in enumerate(vals):
        try:
            Us[k], Ls[k] = ql(M, tol)
        except NearSingular as exc:
            raise NearSingular(f"at t = {times[k]}: {exc}") from None
    return times, sides, Us, Ls


@dataclass
class NsdResult:
    """Outcome of a null space decomposition.

    ``tilde`` holds ``V* Q V`` samples along ``times``/``sides``; ``hat``
    holds ``U* Q U`` when a unitary factor was computed.  ``hat_decreasing``
    is reported, not required: the unitary variant need not be monotone.
    """

    V0: np.ndarray
    rank_profile: RankProfile
    chain: KernelChain
    times: np.ndarray
    sides: np.ndarray
    ranks: np.ndarray
    tilde: np.ndarray
    V: PiecewiseMatrixFunction | None = None
    U: np.ndarray | None = None
    L: np.ndarray | None = None
    hat: np.ndarray | None = None
    tilde_report: object = None
    hat_decreasing: bool | None = None
    block_residual: float = 0.0
    notes: list = field(default_factory=list)

    def tilde11(self):
        return [m[:r, :r] for m, r in zip(self.tilde, self.ranks)]

    def hat11(self):
        return None if self.hat is None else [m[:r, :r] for m, r in zip(self.hat, self.ranks)]

    def manifest(self):
        out = {"rank_profile": self.rank_profile.to_dict(),
               "kernel_sizes": self.chain.sizes,
               "merged_stages": self.chain.merged,
               "block_residual": self.block_residual,
               "nodes": int(len(self.times)),
               "notes": self.notes}
        if self.tilde_report is not None:
            out["tilde_verdict"] = self.tilde_report.verdict
        if self.hat_decreasing is not None:
            out["hat_weakly_decreasing"] = self.hat_decreasing
        return out

    def to_json(self):
        return json.dumps(self.manifest(), sort_keys=True, indent=2)


def _check_blocks(mats, ranks, times, tol, thr_pd, label):
    """Trailing ``n - r`` columns vanish and the leading block is definite."""
    worst = 0.0
    for M, r, t in zip(mats, ranks, times):
        n = M.shape[0]
        if r < n:
            res = float(np.max(np.abs(M[:, r:])))
            worst = max(worst, res)
            if res > tol:
                raise ChainViolation(f"{label}: trailing block entry {res:.3g} at t = {t}",
                                     time=float(t), residual=res)
        if r > 0:
            e = float(min_eig(M[:r, :r]))
            if e <= thr_pd:
                raise ChainViolation(f"{label}: leading block not definite (min eig {e:.3g}) at t = {t}",
                                     time=float(t), residual=e)
    return worst


def nsd_constant(Q, grid=None, tol=None, transported=False, profile=None) -> NsdResult:
    """Constant decomposition ``V0* Q V0 = diag(Q11, 0)`` for weakly decreasing ``Q``."""
    f = _f(Q)
    grid = default_grid(f) if grid is None else _with_breakpoints(f, grid)
    profile = profile or rank_profile(f, grid, tol, transported=transported)
    chain = kernel_chain(f, profile)
    V0 = chain.vectors[:, ::-1]
    times, sides, vals = f.chain(grid)
    ranks = _ranks(vals, profile.threshold)
    tilde = conj_t(V0) @ vals @ V0
    scale = max(1.0, _global_scale(f, grid))
    block_tol = max(profile.threshold, 10 * np.finfo(float).eps * scale)
    worst = _check_blocks(tilde, ranks, times, block_tol, profile.threshold, "V0* Q V0")
    return NsdResult(V0, profile, chain, times, sides, ranks, tilde, block_residual=worst)


def _closed_system(A: PiecewiseMatrixFunction) -> LtvSystem:
    n = A.shape[0]
    iv = A.interval
    z = PiecewiseMatrixFunction.constant
    return LtvSystem(A, z(np.zeros((n, 1)), iv), z(np.zeros((1, n)), iv), z(np.zeros((1, 1)), iv))


def nsd_flow(sys_or_A, Q, t0=None, grid=None, tol=None, rank_tol=None) -> NsdResult:
    """Decomposition ``V = X V0`` with ``V* Q V`` weakly decreasing and block structured.

    Raises
    ------
    NotStorage
        If ``X* Q X`` is not weakly decreasing, i.e. ``Q`` is no storage for
        the closed system ``x' = A x``.
    """
    sys = sys_or_A if isinstance(sys_or_A, LtvSystem) else _closed_system(sys_or_A)
    f = _f(Q)
    a = max(sys.interval[0], f.interval[0])
    b = min(sys.interval[1], f.interval[1])
    t0 = a if t0 is None else float(t0)
    fsol = fundamental_solution(sys, t0, (a, b))
    grid = make_grid((a, b), 401, np.concatenate([f.breakpoints, f.kinks])) if grid is None else np.asarray(grid, dtype=float)
    grid = np.unique(np.concatenate([grid, sys.breakpoints[(sys.breakpoints > a) & (sys.breakpoints < b)]]))
    Qx = q_along_flow(Q, fsol, grid)
    report = check_weak_decrease(Qx, grid, tol=tol)
    if not report.decreasing:
        raise NotStorage("X* Q X is not weakly decreasing; Q is no storage for the closed system",
                         report)
    res = nsd_constant(Qx, grid, tol=rank_tol, transported=True)
    V0 = res.V0
    V = product_fn(fsol.X, PiecewiseMatrixFunction.constant(V0, (a, b)))
    Qt = congruence(Q, V, grid)
    res.V = V
    res.tilde_report = check_weak_decrease(Qt, grid, tol=tol)
    res.notes.append("tilde Q = V* Q V with V = X V0")
    return res


def nsd_unitary(sys_or_A, Q, t0=None, grid=None, tol=None, rank_tol=None) -> NsdResult:
    """Pointwise unitary decomposition from the QL factorization of ``V = X V0``.

    ``hat = U* Q U`` keeps the block structure but is generally not monotone;
    ``hat_decreasing`` records the adjacent-pair verdict for information.
    """
    res = nsd_flow(sys_or_A, Q, t0, grid, tol, rank_tol)
    f = _f(Q)
    times, sides, U, L = ql_factorization(res.V, res.times, sides=res.sides)
    vals = f.sample(times, sides)
    hat = conj_t(U) @ vals @ U
    # hat Q sits in the transported frame's scale; reuse its threshold
    thr = res.rank_profile.threshold
    res.block_residual = max(res.block_residual,
                             _check_blocks(hat, res.ranks, times, max(thr, 1e-12), thr, "U* Q U"))
    diffs = min_eig(hat[:-1] - hat[1:])
    scale = float(np.max(np.linalg.norm(hat, 2, axis=(1, 2))))
    res.U, res.L, res.hat = U, L, hat
    res.hat_decreasing = bool(np.all(diffs >= -1e-9 * (1 + scale)))
    if not res.hat_decreasing:
        res.notes.append("U* Q U is not weakly decreasing; only V* Q V carries that property")
    return res


def certify_unitary_nsd(Q, U, grid=None, tol=None):
    """Check that a given pointwise unitary ``U`` (matrix or function) exposes the kernels.

    Returns
    -------
    dict
        ``unitary_residual``, ``block_residual`` and the ``hat`` samples.
    """
    f = _f(Q)
    grid = default_grid(f) if grid is None else _with_breakpoints(f, grid)
    if not isinstance(U, PiecewiseMatrixFunction):
        U = PiecewiseMatrixFunction.constant(U, f.interval)
    times, sides, vals = f.chain(grid)
    Uv = U.evaluate(times)
    n = f.shape[0]
    ures = float(np.max(np.linalg.norm(conj_t(Uv) @ Uv - np.eye(n), 2, axis=(1, 2))))
    if ures > 1e-10:
        raise ShapeMismatch(f"U is not unitary: |U*U - I| = {ures:.3g}")
    thr = rank_threshold(_global_scale(f, grid), n) if tol is None else float(tol)
    ranks = _ranks(vals, thr)
    hat = conj_t(Uv) @ vals @ Uv
    worst = _check_blocks(hat, ranks, times, max(thr, 1e-12), thr, "U* Q U")
    return {"unitary_residual": ures, "block_residual": worst, "times": times, "sides": sides,
            "ranks": ranks, "hat": hat}
