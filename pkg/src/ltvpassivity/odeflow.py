"""Integration of linear time-varying dynamics.

The system is ``x' = A(t) x + B(t) u``, ``y = C(t) x + D(t) u`` with matrix
functions from :mod:`.matfun`.  Every breakpoint or kink of the coefficients,
and every boundary of a piecewise-constant input, is a mandatory step boundary,
so each call to the Runge-Kutta integrator sees a smooth right-hand side.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationFailure, OutOfDomain, ShapeMismatch, SingularityDetected
from .matfun import PiecewiseMatrixFunction, Segment

__all__ = [
    "LtvSystem", "FundamentalSolution", "PiecewiseConstantInput", "Trajectory",
    "fundamental_solution", "solve_inhomogeneous", "supply_integral",
    "RTOL", "ATOL", "TAU_INV", "TAU_TRAJ",
]

RTOL = 1e-9
ATOL = 1e-12
TAU_INV = 1e-8
TAU_TRAJ = 1e-7

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class LtvSystem:
    """Coefficient tuple ``(A, B, C, D)`` on a shared working interval.

    Parameters
    ----------
    A, B, C, D : PiecewiseMatrixFunction
        Shapes n x n, n x m, m x n and m x m.
    name : str, optional
    """

    def __init__(self, A, B, C, D, name=None):
        n = A.shape[0]
        if A.shape != (n, n):
            raise ShapeMismatch(f"A must be square, got {A.shape}")
        m = B.shape[1]
        if B.shape != (n, m) or C.shape != (m, n) or D.shape != (m, m):
            raise ShapeMismatch(
                f"incompatible shapes A{A.shape} B{B.shape} C{C.shape} D{D.shape}")
        ivals = [f.interval for f in (A, B, C, D)]
        if len(set(ivals)) != 1:
            raise ShapeMismatch(f"coefficients are defined on different intervals {ivals}")
        self.A, self.B, self.C, self.D = A, B, C, D
        self.n, self.m = n, m
        self.interval = ivals[0]
        self.name = name

    @property
    def breakpoints(self):
        return np.unique(np.concatenate([f.breakpoints for f in (self.A, self.B, self.C, self.D)]))

    def cuts(self, a=None, b=None):
        """Breakpoints and kinks of all four coefficients strictly inside ``(a, b)``."""
        return np.unique(np.concatenate(
            [f.smooth_cuts(a, b) for f in (self.A, self.B, self.C, self.D)]))

    def is_real(self, probe=None):
        if probe is None:
            probe = np.linspace(*self.interval, 17)
        return all(np.allclose(f.evaluate(probe).imag, 0.0) for f in (self.A, self.B, self.C, self.D))

    def __repr__(self):
        return f"LtvSystem(name={self.name!r}, n={self.n}, m={self.m}, interval={self.interval})"


def _closure_eval(f: PiecewiseMatrixFunction, lo, hi):
    """Evaluator of the segment of ``f`` that owns ``(lo, hi)``, valid on its closure."""
    seg = f.segments[f._index_right(0.5 * (lo + hi))]
    return lambda t: seg.value(np.atleast_1d(t))[0]


def _check_sol(sol, lo, hi):
    if sol.status != 0 or not sol.success:
        raise IntegrationFailure(f"integration failed on [{lo}, {hi}]: {sol.message}")


class _DenseSegment(Segment):
    """Segment backed by a scipy dense-output interpolant of a stacked state."""

    kind = "flow"

    def __init__(self, start, end, sol, sl, shape, deriv):
        super().__init__(start, end, shape)
        self.sol = sol
        self.sl = sl
        self._deriv = deriv

    def value(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        y = self.sol(t)[self.sl]
        return y.T.reshape((t.size,) + self.shape)

    def derivative(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self._deriv(t, self.value(t))

    def restrict(self, start, end):
        return _DenseSegment(start, end, self.sol, self.sl, self.shape, self._deriv)


@dataclass
class FundamentalSolution:
    """``X`` with ``X' = A X``, ``X(anchor_time) = I`` and its companion inverse ``Y = X^-1``."""

    anchor_time: float
    X: PiecewiseMatrixFunction
    Xinv: PiecewiseMatrixFunction
    span: tuple
    nodes: np.ndarray
    stats: dict = field(default_factory=dict)

    def __call__(self, t):
        return self.X.evaluate(t)

    def inverse(self, t):
        return self.Xinv.evaluate(t)


def fundamental_solution(sys: LtvSystem, t0: float, span=None, tol: float = TAU_INV,
                         rtol: float = RTOL, atol: float = ATOL, check_points: int = 8):
    """Fundamental solution anchored at ``t0`` on ``span``.

    Parameters
    ----------
    sys : LtvSystem
    t0 : float
        Anchor, ``X(t0) = I``.
    span : tuple of float, optional
        Sub-interval containing ``t0``; defaults to the working interval.
    tol : float
        Inverse-consistency tolerance; also sets the conditioning limit ``1/tol``.

    Returns
    -------
    FundamentalSolution

    Raises
    ------
    IntegrationFailure
        If the integrator cannot complete a step.
    SingularityDetected
        If ``cond(X)`` exceeds ``1/tol`` or ``X Y`` drifts away from ``I``.
    """
    a, b = sys.interval if span is None else map(float, span)
    lo_i, hi_i = sys.interval
    if not (lo_i <= a <= t0 <= b <= hi_i) or not b > a:
        raise OutOfDomain(f"need t0 in span within [{lo_i}, {hi_i}], got t0={t0}, span=[{a}, {b}]")
    n = sys.n
    cuts = np.unique(np.concatenate([[a, b, t0], sys.A.smooth_cuts(a, b)]))
    dtype = complex if np.any(sys.A.evaluate(np.linspace(a, b, 17)).imag) else float
    eye = np.eye(n, dtype=dtype)

    def make_rhs(Af):
        def rhs(t, z):
            At = Af(t)
            X = z[: n * n].reshape(n, n)
            Y = z[n * n:].reshape(n, n)
            return np.concatenate([(At @ X).ravel(), (-Y @ At).ravel()])
        return rhs

    pieces = {}
    stats = {"nfev": 0, "steps": 0}

    def run(lo, hi, start, z0):
        Af = _closure_eval(sys.A, lo, hi)
        if dtype is float:
            f = make_rhs(lambda t: Af(t).real)
        else:
            f = make_rhs(Af)
        end = hi if start == lo else lo
        sol = solve_ivp(f, (start, end), z0, method="DOP853", rtol=rtol, atol=atol,
                        dense_output=True)
        _check_sol(sol, lo, hi)
        stats["nfev"] += int(sol.nfev)
        stats["steps"] += len(sol.t) - 1
        pieces[(lo, hi)] = sol.sol
        return sol.y[:, -1]

    z_init = np.concatenate([eye.ravel(), eye.ravel()])
    k0 = int(np.searchsorted(cuts, t0))
    z = z_init
    for lo, hi in zip(cuts[k0:-1], cuts[k0 + 1:]):
        z = run(lo, hi, lo, z)
    z = z_init
    for lo, hi in zip(cuts[:k0][::-1], cuts[1:k0 + 1][::-1]):
        z = run(lo, hi, hi, z)

    A = sys.A
    xs, ys = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        sol = pieces[(lo, hi)]
        seg_a = A.segments[A._index_right(0.5 * (lo + hi))]
        xs.append(_DenseSegment(lo, hi, sol, slice(0, n * n), (n, n),
                                lambda t, X, s=seg_a: s.value(t) @ X))
        ys.append(_DenseSegment(lo, hi, sol, slice(n * n, 2 * n * n), (n, n),
                                lambda t, Y, s=seg_a: -Y @ s.value(t)))
    X = PiecewiseMatrixFunction(xs)
    Y = PiecewiseMatrixFunction(ys)

    nodes = np.unique(np.concatenate(
        [np.linspace(lo, hi, check_points) for lo, hi in zip(cuts[:-1], cuts[1:])]))
    Xv = X.evaluate(nodes)
    Yv = Y.evaluate(nodes)
    Xv[nodes == t0] = eye
    Yv[nodes == t0] = eye
    sv = np.linalg.svd(Xv, compute_uv=False)
    cond = sv[:, 0] / sv[:, -1]
    if np.any(~np.isfinite(cond)) or np.any(cond > 1.0 / tol):
        k = int(np.nanargmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise SingularityDetected(f"cond(X) = {cond[k]:.3g} exceeds {1.0 / tol:.3g} at t = {nodes[k]}")
    # residual scaled by the size of the factors; exact I at the anchor
    scale = np.maximum(1.0, np.linalg.norm(Xv, 2, axis=(1, 2)) * np.linalg.norm(Yv, 2, axis=(1, 2)))
    resid = np.linalg.norm(Xv @ Yv - eye, 2, axis=(1, 2)) / scale
    direct = np.linalg.inv(Xv)
    mismatch = np.linalg.norm(Yv - direct, 2, axis=(1, 2)) / np.maximum(
        1.0, np.linalg.norm(direct, 2, axis=(1, 2)))
    stats.update(max_inverse_residual=float(resid.max()), max_inverse_mismatch=float(mismatch.max()),
                 max_condition=float(cond.max()), pieces=len(cuts) - 1)
    if resid.max() > tol or mismatch.max() > tol:
        k = int(np.argmax(np.maximum(resid, mismatch)))
        raise SingularityDetected(
            f"companion inverse drifted: |XY - I| = {resid[k]:.3g} at t = {nodes[k]}")
    return FundamentalSolution(float(t0), X, Y, (a, b), nodes, stats)


class PiecewiseConstantInput:
    """Input constant on the cells of ``grid``; value ``values[k]`` on ``[grid[k], grid[k+1])``."""

    def __init__(self, grid, values):
        self.grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=complex)
        if values.ndim == 1:
            values = values[:, None]
        if self.grid.ndim != 1 or len(self.grid) < 2 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("input grid must be strictly increasing with at least two nodes")
        if values.shape[0] != len(self.grid) - 1:
            raise ShapeMismatch(
                f"need one input value per cell: {len(self.grid) - 1} cells, {values.shape[0]} values")
        self.values = values
        self.m = values.shape[1]

    @classmethod
    def constant(cls, value, interval):
        value = np.atleast_1d(np.asarray(value, dtype=complex))
        return cls(list(interval), value[None, :])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, len(self.values) - 1)
        return self.values[k]


class Trajectory:
    """States at grid nodes, one input per cell and outputs at nodes.

    ``y[k] = C(t_k) x[k] + D(t_k) u[k]`` uses the input of the cell starting
    at ``t_k``; the final node reuses the last cell's input.  When built by
    :func:`solve_inhomogeneous` the trajectory also carries the system and the
    dense interpolants, so states can be evaluated between nodes.
    """

    def __init__(self, grid, x, u, y, system=None, dense=None, anchor=None):
        self.grid = np.asarray(grid, dtype=float)
        self.x = np.asarray(x, dtype=complex)
        self.u = np.asarray(u, dtype=complex)
        self.y = np.asarray(y, dtype=complex)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if len(self.grid) < 2 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("trajectory grid must be strictly increasing")
        N = len(self.grid)
        if self.x.shape[0] != N or self.y.shape[0] != N or self.u.shape[0] != N - 1:
            raise ShapeMismatch("x and y need one row per node and u one row per cell")
        self.system = system
        self.dense = dense
        self.anchor = anchor

    @property
    def span(self):
        return (self.grid[0], self.grid[-1])

    def _cell(self, t):
        return np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, len(self.u) - 1)

    def state(self, t):
        """State at times ``t`` inside the grid span (requires dense data)."""
        if self.dense is None:
            raise ValueError("trajectory has no dense output")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = self._cell(t)
        out = np.empty((t.size, self.x.shape[1]), dtype=complex)
        for c in np.unique(k):
            sel = k == c
            out[sel] = self.dense[c](t[sel]).T
        return out

    def to_csv(self, stream=None, extra=None):
        """Write the trajectory as CSV; returns the text when ``stream`` is None.

        ``extra`` maps column names to per-node real values appended on the right.
        """
        extra = extra or {}
        own = stream is None
        stream = stream or _io.StringIO()
        n, m = self.x.shape[1], self.u.shape[1]
        stream.write(f"# n={n} m={m} nodes={len(self.grid)}\n")
        w = csv.writer(stream, lineterminator="\n")
        head = ["t"]
        for name, k in (("x", n), ("u", m), ("y", m)):
            for i in range(k):
                head += [f"re_{name}{i + 1}", f"im_{name}{i + 1}"]
        head += list(extra)
        w.writerow(head)
        u_nodes = np.vstack([self.u, self.u[-1:]])
        for k, t in enumerate(self.grid):
            row = [repr(float(t))]
            for vec in (self.x[k], u_nodes[k], self.y[k]):
                for v in vec:
                    row += [repr(float(v.real)), repr(float(v.imag))]
            row += [repr(float(col[k])) for col in extra.values()]
            w.writerow(row)
        return stream.getvalue() if own else None


def _input_cells(u, m, grid):
    if isinstance(u, PiecewiseConstantInput):
        return np.array([u(0.5 * (lo + hi)) for lo, hi in zip(grid[:-1], grid[1:])]).reshape(-1, m)
    if callable(u):
        return np.array([np.atleast_1d(u(0.5 * (lo + hi))) for lo, hi in zip(grid[:-1], grid[1:])],
                        dtype=complex).reshape(-1, m)
    vec = np.atleast_1d(np.asarray(u, dtype=complex)).reshape(-1)
    if vec.size != m:
        raise ShapeMismatch(f"constant input must have {m} entries, got {vec.size}")
    return np.tile(vec, (len(grid) - 1, 1))


def solve_inhomogeneous(sys: LtvSystem, t0: float, x0, u=None, span=None, grid=None,
                        verify: bool = False, rtol: float = RTOL, atol: float = ATOL,
                        tau_traj: float = TAU_TRAJ) -> Trajectory:
    """Trajectory through ``x(t0) = x0`` under a piecewise-constant input.

    Parameters
    ----------
    sys : LtvSystem
    t0 : float
    x0 : array_like, shape (n,)
    u : PiecewiseConstantInput, callable, array_like or None
        ``None`` means zero input; a vector is a constant input; a callable is
        sampled at cell midpoints.
    span : tuple, optional
        Time window; defaults to the input grid span or the working interval.
    grid : array_like, optional
        Extra nodes.  Breakpoints, kinks, input boundaries, ``t0`` and the
        span ends are always added.
    verify : bool
        Recompute the nodes by variation of constants and raise
        :class:`IntegrationFailure` on disagreement beyond ``tau_traj``.
    """
    n, m = sys.n, sys.m
    x0 = np.atleast_1d(np.asarray(x0, dtype=complex)).reshape(-1)
    if x0.size != n:
        raise ShapeMismatch(f"x0 must have {n} entries, got {x0.size}")
    if span is None:
        span = (u.grid[0], u.grid[-1]) if isinstance(u, PiecewiseConstantInput) else sys.interval
    a, b = map(float, span)
    lo_i, hi_i = sys.interval
    slack = 1e-12 * max(1.0, hi_i - lo_i)
    if not (lo_i - slack <= a <= t0 <= b <= hi_i + slack) or not b > a:
        raise OutOfDomain(f"t0={t0} and span [{a}, {b}] must lie in [{lo_i}, {hi_i}]")
    a, b = max(a, lo_i), min(b, hi_i)
    parts = [[a, b, t0], sys.cuts(a, b)]
    if isinstance(u, PiecewiseConstantInput):
        parts.append(u.grid[(u.grid > a) & (u.grid < b)])
    if grid is not None:
        g = np.asarray(grid, dtype=float)
        parts.append(g[(g > a) & (g < b)])
    nodes = np.unique(np.concatenate([np.asarray(p, dtype=float) for p in parts]))
    if u is None:
        ucells = np.zeros((len(nodes) - 1, m), dtype=complex)
    else:
        ucells = _input_cells(u, m, nodes)

    real = sys.is_real() and not np.any(x0.imag) and not np.any(ucells.imag)

    def rhs_for(k):
        lo, hi = nodes[k], nodes[k + 1]
        Af = _closure_eval(sys.A, lo, hi)
        Bf = _closure_eval(sys.B, lo, hi)
        uk = ucells[k]
        if real:
            ukr = uk.real
            return lambda t, x: Af(t).real @ x + Bf(t).real @ ukr
        return lambda t, x: Af(t) @ x + Bf(t) @ uk

    K = len(nodes) - 1
    xs = np.empty((K + 1, n), dtype=complex)
    dense = [None] * K
    k0 = int(np.searchsorted(nodes, t0))
    xs[k0] = x0
    for k in range(k0, K):
        sol = solve_ivp(rhs_for(k), (nodes[k], nodes[k + 1]), (xs[k].real if real else xs[k]), method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True)
        _check_sol(sol, nodes[k], nodes[k + 1])
        xs[k + 1] = sol.y[:, -1]
        dense[k] = sol.sol
    for k in range(k0 - 1, -1, -1):
        sol = solve_ivp(rhs_for(k), (nodes[k + 1], nodes[k]), (xs[k + 1].real if real else xs[k + 1]), method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True)
        _check_sol(sol, nodes[k], nodes[k + 1])
        xs[k] = sol.y[:, -1]
        dense[k] = sol.sol

    # output at node k uses the value of the owning (right) cell, matching half-open segments
    unode = np.vstack([ucells, ucells[-1:]])
    Cn = sys.C.evaluate(nodes)
    Dn = sys.D.evaluate(nodes)
    ys = np.einsum("kij,kj->ki", Cn, xs) + np.einsum("kij,kj->ki", Dn, unode)
    traj = Trajectory(nodes, xs, ucells, ys, system=sys, dense=dense, anchor=float(t0))
    if verify:
        ref = variation_of_constants(sys, t0, x0, traj)
        err = np.abs(ref - xs).max(axis=1) / (1.0 + np.abs(xs).max(axis=1))
        if err.max() > tau_traj:
            k = int(np.argmax(err))
            raise IntegrationFailure(
                f"variation-of-constants check failed: error {err[k]:.3g} at t = {nodes[k]}")
    return traj


def variation_of_constants(sys: LtvSystem, t0, x0, traj: Trajectory, fsol=None):
    """States at ``traj.grid`` from ``x(t) = X(t)[x0 + int_{t0}^t X(s)^-1 B(s) u(s) ds]``."""
    grid = traj.grid
    if fsol is None:
        fsol = fundamental_solution(sys, t0, (grid[0], grid[-1]))
    n = sys.n
    incr = np.zeros((len(grid) - 1, n), dtype=complex)
    for k, (lo, hi) in enumerate(zip(grid[:-1], grid[1:])):
        s = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
        Bs = sys.B.segments[sys.B._index_right(0.5 * (lo + hi))].value(s)
        vals = fsol.Xinv.evaluate(s) @ Bs @ traj.u[k]
        incr[k] = 0.5 * (hi - lo) * np.tensordot(_GL_WEIGHTS, vals, axes=1)
    k0 = int(np.searchsorted(grid, t0))
    acc = np.zeros((len(grid), n), dtype=complex)
    acc[k0 + 1:] = np.cumsum(incr[k0:], axis=0)
    acc[:k0] = -np.cumsum(incr[:k0][::-1], axis=0)[::-1]
    Xg = fsol.X.evaluate(grid)
    return np.einsum("kij,kj->ki", Xg, x0[None, :] + acc)


def supply_integral(traj: Trajectory, t0: float, t1: float) -> float:
    """``int_{t0}^{t1} Re(y(t)^* u(t)) dt`` over a trajectory.

    With dense data the integrand is evaluated exactly inside each cell and
    integrated by 8-point Gauss-Legendre (cells are smooth by construction).
    Without dense data the node outputs are integrated by the trapezoid rule.
    ``t1 < t0`` gives the negated integral.
    """
    lo, hi = traj.span
    sign = 1.0
    if t1 < t0:
        t0, t1, sign = t1, t0, -1.0
    slack = 1e-12 * max(1.0, hi - lo)
    if t0 < lo - slack or t1 > hi + slack:
        raise OutOfDomain(f"[{t0}, {t1}] is outside the trajectory span [{lo}, {hi}]")
    t0, t1 = max(t0, lo), min(t1, hi)
    if t1 == t0:
        return 0.0
    g = traj.grid
    inner = g[(g > t0) & (g < t1)]
    edges = np.concatenate([[t0], inner, [t1]])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        k = int(traj._cell(0.5 * (a + b)))
        uk = traj.u[k]
        if traj.dense is not None and traj.system is not None:
            s = 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a)
            sysm = traj.system
            C = sysm.C.segments[sysm.C._index_right(0.5 * (a + b))].value(s)
            D = sysm.D.segments[sysm.D._index_right(0.5 * (a + b))].value(s)
            x = traj.dense[k](s).T
            y = np.einsum("kij,kj->ki", C, x) + D @ uk
            f = np.real(np.conj(y) @ uk)
            total += 0.5 * (b - a) * float(_GL_WEIGHTS @ f)
        else:
            ga, gb = g[k], g[k + 1]
            ya, yb = traj.y[k], traj.y[k + 1]
            wa = (a - ga) / (gb - ga)
            wb = (b - ga) / (gb - ga)
            y_a = (1 - wa) * ya + wa * yb
            y_b = (1 - wb) * ya + wb * yb
            total += 0.5 * (b - a) * float(np.real(np.conj(y_a) @ uk + np.conj(y_b) @ uk))
    return sign * total
