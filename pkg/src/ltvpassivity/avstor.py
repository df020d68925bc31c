"""Available storage by finite-horizon optimization over piecewise-constant inputs.

For inputs constant on ``N`` uniform cells of ``[t0, t0 + T]`` the supply
``J(u) = int Re(y* u) dt`` is an exact quadratic ``u* H u + Re(u* K x0)``.
Its infimum gives a lower bound ``-inf J`` of the available storage; the
bound only grows when the horizon is extended or the cells are refined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (IllConditioned, InconsistentSampler, IntegrationFailure, NotConverged,
                     ShapeMismatch)
from .loewner import StorageCandidate
from .odeflow import ATOL, RTOL, LtvSystem

__all__ = [
    "HorizonPolicy", "HorizonResult", "AvstorEstimate", "QuadraticProblem",
    "horizon_optimize", "available_storage", "AvailableStorageSampler",
    "polarization_recover", "quadratic_identity_audit", "minimality_audit",
]

MAX_UNKNOWNS = 4096


@dataclass(frozen=True)
class HorizonPolicy:
    """Horizons ``horizon0 * 2^j <= max_horizon``, cells ``min_cells * 2^k <= max_cells``.

    ``eps_conv`` is the relative growth below which two consecutive horizon
    doublings count as converged.
    """

    horizon0: float = 1.0
    max_horizon: float = 16.0
    min_cells: int = 16
    max_cells: int = 256
    eps_conv: float = 1e-3
    tau_psd: float = 1e-9

    def horizons(self, room: float):
        out = []
        T = min(self.horizon0, room)
        while T <= min(self.max_horizon, room) * (1 + 1e-12):
            out.append(T)
            T *= 2.0
        if not out:
            out.append(room)
        return out

    def cell_counts(self):
        out, N = [], self.min_cells
        while N <= self.max_cells:
            out.append(N)
            N *= 2
        return out


def _cell_propagators(sys: LtvSystem, edges):
    """``(Phi, Gamma, P, R)`` per cell for a unit-constant input.

    ``x(b) = Phi x(a) + Gamma u`` and ``int_a^b y dt = P x(a) + R u``.
    """
    n, m = sys.n, sys.m
    real = sys.is_real()
    cuts = sys.cuts(edges[0], edges[-1])
    out = []
    sizes = [n * n, n * m, m * n, m * m]
    offs = np.cumsum([0] + sizes)

    def unpack(z):
        return (z[offs[0]:offs[1]].reshape(n, n), z[offs[1]:offs[2]].reshape(n, m),
                z[offs[2]:offs[3]].reshape(m, n), z[offs[3]:offs[4]].reshape(m, m))

    for lo, hi in zip(edges[:-1], edges[1:]):
        inner = cuts[(cuts > lo) & (cuts < hi)]
        pts = np.concatenate([[lo], inner, [hi]])
        z = np.concatenate([np.eye(n).ravel(), np.zeros(n * m + m * n + m * m)]).astype(
            float if real else complex)
        for a, b in zip(pts[:-1], pts[1:]):
            mid = 0.5 * (a + b)
            segs = [f.segments[f._index_right(mid)] for f in (sys.A, sys.B, sys.C, sys.D)]

            def rhs(t, z, segs=segs):
                A, B, C, D = (s.value(np.array([t]))[0] for s in segs)
                if real:
                    A, B, C, D = A.real, B.real, C.real, D.real
                Phi, Gam, _, _ = unpack(z)
                return np.concatenate([(A @ Phi).ravel(), (A @ Gam + B).ravel(),
                                       (C @ Phi).ravel(), (C @ Gam + D).ravel()])

            sol = solve_ivp(rhs, (a, b), z, method="DOP853", rtol=RTOL, atol=ATOL)
            if not sol.success:
                raise IntegrationFailure(f"propagator integration failed on [{a}, {b}]: {sol.message}")
            z = sol.y[:, -1]
        out.append(tuple(np.asarray(x, dtype=complex) for x in unpack(z)))
    return out


def _compose(c1, c2):
    """Cell ``c1`` followed by ``c2`` with the same constant input."""
    P1, G1, p1, r1 = c1
    P2, G2, p2, r2 = c2
    return (P2 @ P1, P2 @ G1 + G2, p1 + p2 @ P1, r1 + r2 + p2 @ G1)


@dataclass
class QuadraticProblem:
    """``J(u) = u* H u + Re(u* K x0)`` with Hermitian ``H``; ``value(x0) = -inf J``."""

    H: np.ndarray
    K: np.ndarray
    horizon: float
    cells: int
    _pinv: np.ndarray = field(default=None, repr=False)
    eig_min: float = 0.0
    eig_max: float = 0.0

    @classmethod
    def from_cells(cls, props, horizon):
        N = len(props)
        n = props[0][0].shape[0]
        m = props[0][1].shape[1]
        M = np.zeros((N * m, N * m), dtype=complex)
        K = np.zeros((N * m, n), dtype=complex)
        F = np.eye(n, dtype=complex)
        # G[j] maps u_j to the current cell's starting state
        G = np.zeros((N, n, m), dtype=complex)
        for k, (Phi, Gam, P, R) in enumerate(props):
            rows = slice(k * m, (k + 1) * m)
            K[rows] = P @ F
            if k:
                M[rows, : k * m] = np.einsum("ij,kjl->ikl", P, G[:k]).reshape(m, k * m)
            M[rows, rows] = R
            G[:k] = np.einsum("ij,kjl->kil", Phi, G[:k])
            G[k] = Gam
            F = Phi @ F
        H = 0.5 * (M + M.conj().T)
        ev = np.linalg.eigvalsh(H)
        return cls(H, K, float(horizon), N, eig_min=float(ev[0]), eig_max=float(ev[-1]))

    @property
    def scale(self):
        return max(abs(self.eig_min), abs(self.eig_max), 1e-300)

    def is_convex(self, tau_psd):
        return self.eig_min >= -tau_psd * self.scale

    def pinv(self):
        if self._pinv is None:
            self._pinv = np.linalg.pinv(self.H, rcond=1e-12, hermitian=True)
        return self._pinv

    def solve(self, x0, tau_psd=1e-9):
        """Optimal input and value; ``(None, inf)`` if the objective is unbounded below."""
        x0 = np.asarray(x0, dtype=complex).reshape(-1)
        g = self.K @ x0
        if not self.is_convex(tau_psd):
            return None, np.inf
        Hp = self.pinv()
        u = -0.5 * Hp @ g
        # g outside range(H): a linear direction with zero curvature
        resid = np.linalg.norm(self.H @ u + 0.5 * g)
        if resid > 1e-6 * (np.linalg.norm(g) + 1e-300) + 1e-12 * self.scale * np.linalg.norm(u):
            if np.linalg.norm(g - self.H @ (Hp @ g)) > 1e-6 * np.linalg.norm(g):
                return None, np.inf
            raise IllConditioned(f"stationarity residual {resid:.3g} too large")
        value = float(np.real(0.25 * np.vdot(g, Hp @ g)))
        return u, value

    def matrix(self):
        """``Q`` with ``value(x0) = x0* Q x0 / 2`` (convex case)."""
        Hp = self.pinv()
        return 0.5 * self.K.conj().T @ Hp @ self.K


@dataclass
class HorizonResult:
    horizon: float
    cells: int
    value: float
    unbounded: bool
    hess_min: float
    hess_max: float
    u: np.ndarray | None = None

    def __float__(self):
        return float(self.value)


class _ProblemCache:
    """Quadratic problems per ``(t0, horizon, cells)``; coarse grids reuse fine propagators."""

    def __init__(self, sys: LtvSystem):
        self.sys = sys
        self.props = {}
        self.problems = {}

    def propagators(self, t0, T, N):
        key = (t0, T)
        have = self.props.get(key)
        if have is None or len(have) < N or len(have) % N:
            edges = np.linspace(t0, t0 + T, N + 1)
            have = _cell_propagators(self.sys, edges)
            self.props[key] = have
        props = have
        while len(props) > N:
            props = [_compose(props[2 * i], props[2 * i + 1]) for i in range(len(props) // 2)]
        return props

    def problem(self, t0, T, N):
        key = (t0, T, N)
        if key not in self.problems:
            if N * self.sys.m > MAX_UNKNOWNS:
                raise ValueError(f"{N} cells x {self.sys.m} inputs exceeds {MAX_UNKNOWNS} unknowns")
            self.problems[key] = QuadraticProblem.from_cells(self.propagators(t0, T, N), T)
        return self.problems[key]

    def prime(self, t0, T, counts):
        # integrate once on the finest grid, coarsen by composition
        self.propagators(t0, T, max(counts))


def horizon_optimize(sys: LtvSystem, t0: float, x0, t1: float, cells: int,
                     tau_psd: float = 1e-9, _cache=None) -> HorizonResult:
    """Extracted energy ``-inf J`` over inputs constant on ``cells`` uniform cells of ``[t0, t1]``.

    Parameters
    ----------
    sys : LtvSystem
    t0, t1 : float
    x0 : array_like
    cells : int

    Returns
    -------
    HorizonResult
        ``unbounded`` when the Hessian is indefinite or the linear term
        leaves its range; then no finite supremum exists.
    """
    if not t1 > t0 or cells < 1:
        raise ValueError("need t1 > t0 and at least one cell")
    x0 = np.atleast_1d(np.asarray(x0, dtype=complex))
    if x0.size != sys.n:
        raise ShapeMismatch(f"x0 must have {sys.n} entries")
    cache = _cache or _ProblemCache(sys)
    prob = cache.problem(float(t0), float(t1 - t0), int(cells))
    u, val = prob.solve(x0, tau_psd)
    unb = not np.isfinite(val)
    return HorizonResult(float(t1 - t0), int(cells), float(val), unb, prob.eig_min, prob.eig_max, u)


@dataclass
class AvstorEstimate:
    """Running-maximum estimates of the available storage at ``(t0, x0)``.

    ``value_per_horizon[T]`` is the best value found with horizons up to
    ``T``; it is weakly increasing by construction.
    """

    t0: float
    x0: np.ndarray
    table: list
    value_per_horizon: dict
    converged_value: float
    converged: bool
    unbounded: bool
    Q_a_matrix: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "t0": self.t0,
            "x0": [[float(z.real), float(z.imag)] for z in self.x0],
            "converged_value": None if self.unbounded else self.converged_value,
            "converged": self.converged,
            "unbounded": self.unbounded,
            "value_per_horizon": [[float(T), v] for T, v in sorted(self.value_per_horizon.items())],
            "table": [{"horizon": r.horizon, "cells": r.cells,
                       "value": None if r.unbounded else r.value, "unbounded": r.unbounded,
                       "hessian_min": r.hess_min, "hessian_max": r.hess_max} for r in self.table],
            "notes": self.notes,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def available_storage(sys: LtvSystem, t0: float, x0, policy: HorizonPolicy | None = None,
                      strict: bool = False, _cache=None) -> AvstorEstimate:
    """Sweep horizons and cell counts, keeping the running maximum.

    Stops once the per-horizon value grew by less than ``eps_conv``
    (relative) over two consecutive doublings, or at the policy limits.
    An unbounded stage ends the sweep with ``unbounded=True``.

    Raises
    ------
    NotConverged
        Only with ``strict=True`` when the limits are hit first.
    """
    policy = policy or HorizonPolicy()
    x0 = np.atleast_1d(np.asarray(x0, dtype=complex))
    cache = _cache or _ProblemCache(sys)
    room = sys.interval[1] - t0
    if room <= 0:
        raise ValueError("t0 must lie before the end of the working interval")
    counts = policy.cell_counts()
    table, per_h = [], {}
    best = 0.0
    history = []
    converged = False
    for T in policy.horizons(room):
        cache.prime(float(t0), float(T), counts)
        for N in counts:
            res = horizon_optimize(sys, t0, x0, t0 + T, N, policy.tau_psd, cache)
            res.u = None
            table.append(res)
            if res.unbounded:
                est = AvstorEstimate(float(t0), x0, table, per_h, float("inf"), False, True)
                est.notes.append(
                    f"unbounded at resolution (horizon {res.horizon:g}, {res.cells} cells): the "
                    "piecewise-constant class is a subset of all inputs, so this is conclusive "
                    "for unboundedness; a bounded estimate is only a lower bound")
                return est
            best = max(best, res.value)
        per_h[float(T)] = best
        history.append(best)
        if len(history) >= 3:
            old = history[-3]
            if best - old <= policy.eps_conv * max(abs(best), 1e-300) or best == 0.0:
                converged = True
                break
    est = AvstorEstimate(float(t0), x0, table, per_h, best, converged, False)
    if not converged:
        est.notes.append("horizon or cell limit reached before convergence")
        if strict:
            raise NotConverged("available storage did not converge", est)
    return est


class AvailableStorageSampler:
    """``x -> V_a(t0, x)`` estimates sharing one problem cache."""

    def __init__(self, sys: LtvSystem, t0: float, policy: HorizonPolicy | None = None):
        self.sys = sys
        self.t0 = float(t0)
        self.policy = policy or HorizonPolicy()
        self.cache = _ProblemCache(sys)
        self.n = sys.n

    def estimate(self, x) -> AvstorEstimate:
        return available_storage(self.sys, self.t0, x, self.policy, _cache=self.cache)

    def __call__(self, x) -> float:
        return float(self.estimate(x).converged_value)


class QuadraticSampler:
    """Exact sampler ``x -> x* Q x / 2``, handy as an oracle."""

    def __init__(self, Q):
        self.Q = np.atleast_2d(np.asarray(Q, dtype=complex))
        self.n = self.Q.shape[0]

    def __call__(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=complex))
        return 0.5 * float(np.real(np.vdot(x, self.Q @ x)))


def _scaling_error(sampler, x, lam):
    a = sampler(lam * x)
    b = abs(lam) ** 2 * sampler(x)
    return abs(a - b), abs(a) + abs(b)


def polarization_recover(sampler, n: int | None = None, tol: float = 0.05, check: bool = True):
    """Hermitian ``Q`` with ``sampler(x) ~ x* Q x / 2`` from standard-basis combinations.

    ``q_ij = 2 [ (V(e_i + e_j) - V(e_i - e_j)) / 4 + i (V(e_i - i e_j) - V(e_i + i e_j)) / 4 ]``;
    the factor 2 undoes the one-half convention.

    Returns
    -------
    Q : ndarray
        Symmetrized result.
    residual : float
        ``|Q_raw - Q_raw*|`` before symmetrization.

    Raises
    ------
    InconsistentSampler
        If ``V(lam x) = |lam|^2 V(x)`` fails beyond ``tol`` (relative) on
        basis probes.
    """
    n = sampler.n if n is None else int(n)
    E = np.eye(n, dtype=complex)
    if check:
        for i in range(n):
            for lam in (2.0, -1.0, 1j):
                err, size = _scaling_error(sampler, E[i], lam)
                if err > tol * max(size, 1e-300) and err > 1e-14:
                    raise InconsistentSampler(
                        f"V(lam x) != |lam|^2 V(x) for x = e_{i + 1}, lam = {lam}: error {err:.3g}")
    Q = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            ei, ej = E[i], E[j]
            re = 0.25 * (sampler(ei + ej) - sampler(ei - ej))
            im = 0.25 * (sampler(ei - 1j * ej) - sampler(ei + 1j * ej))
            Q[i, j] = 2.0 * (re + 1j * im)
    resid = float(np.linalg.norm(Q - Q.conj().T, 2))
    return 0.5 * (Q + Q.conj().T), resid


@dataclass
class IdentityAudit:
    passed: bool
    worst_scaling: float
    worst_parallelogram: float
    witness: dict | None
    tolerance: float

    def to_dict(self):
        return {"passed": self.passed, "worst_scaling": self.worst_scaling,
                "worst_parallelogram": self.worst_parallelogram, "witness": self.witness,
                "tolerance": self.tolerance}


def quadratic_identity_audit(sampler, t0=None, probes: int = 10, tol: float = 0.05,
                             seed: int = 0, n: int | None = None) -> IdentityAudit:
    """Scaling and parallelogram identities of a quadratic form on random probes.

    Errors are relative to the sum of magnitudes of the terms involved.
    """
    n = sampler.n if n is None else int(n)
    rng = np.random.default_rng(seed)
    worst_s = worst_p = 0.0
    witness = None
    for k in range(probes):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        y = rng.normal(size=n) + 1j * rng.normal(size=n)
        lam = complex(rng.normal(), rng.normal())
        err, size = _scaling_error(sampler, x, lam)
        rel_s = err / max(size, 1e-300)
        vals = [sampler(x + y), sampler(x - y), sampler(x), sampler(y)]
        perr = abs(vals[0] + vals[1] - 2 * vals[2] - 2 * vals[3])
        rel_p = perr / max(abs(vals[0]) + abs(vals[1]) + 2 * abs(vals[2]) + 2 * abs(vals[3]), 1e-300)
        if (rel_s > worst_s or rel_p > worst_p) and max(rel_s, rel_p) > tol:
            witness = {"probe": k, "scaling_error": rel_s, "parallelogram_error": rel_p}
        worst_s, worst_p = max(worst_s, rel_s), max(worst_p, rel_p)
    return IdentityAudit(worst_s <= tol and worst_p <= tol, worst_s, worst_p, witness, tol)


def minimality_audit(sampler, Q_known, t0: float, probes: int = 50, seed: int = 0,
                     tol: float = 1e-6, n: int | None = None):
    """``V_a(t0, x) <= x* Q_known(t0) x / 2 + tol (1 + bound)`` on random probes.

    The zero probe is always included.  Returns a dict with ``passed``, the
    worst excess and the probe values.
    """
    if isinstance(Q_known, StorageCandidate):
        Qk = Q_known.Q.evaluate(t0)
    elif hasattr(Q_known, "evaluate"):
        Qk = Q_known.evaluate(t0)
    else:
        Qk = np.atleast_2d(np.asarray(Q_known, dtype=complex))
    n = Qk.shape[0] if n is None else int(n)
    rng = np.random.default_rng(seed)
    xs = [np.zeros(n)] + [rng.normal(size=n) for _ in range(probes - 1)]
    worst = -np.inf
    rows = []
    for x in xs:
        va = sampler(x)
        bound = 0.5 * float(np.real(np.vdot(x, Qk @ x)))
        excess = va - bound
        rows.append((va, bound))
        worst = max(worst, excess - tol * (1.0 + abs(bound)))
    return {"passed": bool(worst <= 0.0), "worst_excess": float(worst), "probes": rows}
