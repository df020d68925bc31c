"""Piecewise-defined complex matrix functions of one real time variable.

A :class:`PiecewiseMatrixFunction` is a tiling of a compact working interval
into half-open segments ``[a, b)`` (the last one closed).  Each segment is
smooth on its closure; discontinuities may only occur at segment boundaries
("breakpoints"), where an explicit point value may also be registered.  This
makes left limits, right limits and point values exact and cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _expr
from .errors import AtBreakpoint, OutOfDomain, ParseError, ShapeMismatch

__all__ = [
    "Segment", "ExpressionSegment", "SampledSegment", "ComposedSegment",
    "PiecewiseMatrixFunction", "JumpRecord", "VariationEstimate",
    "make_grid", "evaluate", "one_sided_limits", "derivative", "total_variation",
]

LEFT, POINT, RIGHT = -1, 0, 1


def make_grid(interval, n: int = 201, include: Sequence[float] = ()) -> np.ndarray:
    """Uniform grid of ``n`` nodes on ``interval`` merged with ``include``.

    Nodes closer than ``1e-12 * |interval|`` to an included time are replaced
    by it, so breakpoints always appear exactly.
    """
    a, b = map(float, interval)
    if not b > a:
        raise ValueError(f"empty interval [{a}, {b}]")
    base = np.linspace(a, b, max(int(n), 2))
    extra = np.array([float(x) for x in include if a <= float(x) <= b])
    if extra.size:
        snap = 1e-12 * (b - a)
        keep = np.all(np.abs(base[:, None] - extra[None, :]) > snap, axis=1)
        base = np.concatenate([base[keep], extra])
    return np.unique(base)


def _as_times(t):
    arr = np.asarray(t, dtype=float)
    return arr.reshape(-1), arr.ndim == 0


class Segment:
    """Smooth matrix-valued piece on the closed interval ``[start, end]``."""

    kind = "abstract"

    def __init__(self, start: float, end: float, shape):
        if not end > start:
            raise ValueError(f"degenerate segment [{start}, {end}]")
        self.start = float(start)
        self.end = float(end)
        self.shape = tuple(shape)

    def value(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, t: np.ndarray) -> np.ndarray:
        return self._fd_derivative(t)

    def _fd_derivative(self, t, h=None):
        t = np.asarray(t, dtype=float)
        if h is None:
            h = 1e-6 * max(1.0, self.end - self.start)
        h = min(h, 0.25 * (self.end - self.start))
        lo = np.maximum(t - h, self.start)
        hi = np.minimum(t + h, self.end)
        return (self.value(hi) - self.value(lo)) / (hi - lo)[:, None, None]

    def restrict(self, start, end):
        """Same evaluator on a sub-interval of the closure."""
        raise NotImplementedError


class ExpressionSegment(Segment):
    """Entries are closed-form expressions in ``t`` (see :mod:`._expr`)."""

    kind = "expression"

    def __init__(self, start, end, entries, params=None, validate=True):
        rows = [[_expr.parse_expr(e, params) for e in row] for row in entries]
        if not rows or not rows[0] or any(len(r) != len(rows[0]) for r in rows):
            raise ShapeMismatch("entry table must be a non-empty rectangular grid")
        super().__init__(start, end, (len(rows), len(rows[0])))
        self.entries = rows
        self._d_entries = [[_expr.differentiate(e) for e in row] for row in rows]
        if validate:
            self._check_poles()

    def _check_poles(self, n=2001):
        ts = np.linspace(self.start, self.end, n)
        for row in self.entries:
            for e in row:
                for den in _expr.denominators(e):
                    vals = _expr.evaluate(den, ts)
                    mag = np.abs(vals)
                    scale = max(1.0, float(mag.max()))
                    crossing = np.any(np.sign(vals.real[1:]) * np.sign(vals.real[:-1]) < 0) \
                        and np.allclose(vals.imag, 0.0)
                    if not np.all(np.isfinite(vals)) or mag.min() <= 1e-12 * scale or crossing:
                        raise ParseError(
                            f"denominator {_expr.to_source(den)!r} vanishes on "
                            f"[{self.start}, {self.end}]")

    def _eval(self, table, t):
        t = np.asarray(t, dtype=float)
        out = np.empty((t.size,) + self.shape, dtype=complex)
        for i, row in enumerate(table):
            for j, e in enumerate(row):
                out[:, i, j] = _expr.evaluate(e, t)
        return out

    def value(self, t):
        return self._eval(self.entries, t)

    def derivative(self, t):
        return self._eval(self._d_entries, t)

    def restrict(self, start, end):
        seg = object.__new__(ExpressionSegment)
        Segment.__init__(seg, start, end, self.shape)
        seg.entries = self.entries
        seg._d_entries = self._d_entries
        return seg

    def sources(self):
        return [[_expr.to_source(e) for e in row] for row in self.entries]


class SampledSegment(Segment):
    """Linear interpolation of matrix samples; slopes by central differences."""

    kind = "sampled"

    def __init__(self, start, end, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=complex)
        if values.ndim == 1:
            values = values[:, None, None]
        if times.ndim != 1 or len(times) < 2 or values.shape[0] != len(times):
            raise ShapeMismatch("sampled segment needs >= 2 sample times matching the values")
        if np.any(np.diff(times) <= 0):
            raise ParseError("sample times must be strictly increasing")
        if times[0] > start or times[-1] < end:
            raise ParseError(f"samples do not cover [{start}, {end}]")
        super().__init__(start, end, values.shape[1:])
        self.times = times
        self.values = values

    def value(self, t):
        t = np.asarray(t, dtype=float)
        flat = self.values.reshape(len(self.times), -1)
        out = np.empty((t.size, flat.shape[1]), dtype=complex)
        for k in range(flat.shape[1]):
            out[:, k] = np.interp(t, self.times, flat[:, k].real) \
                + 1j * np.interp(t, self.times, flat[:, k].imag)
        return out.reshape((t.size,) + self.shape)

    def derivative(self, t):
        return self._fd_derivative(t)

    def restrict(self, start, end):
        return SampledSegment(start, end, self.times, self.values)

    @property
    def kinks(self):
        return self.times[(self.times > self.start) & (self.times < self.end)]


class ComposedSegment(Segment):
    """Pointwise combination of other segments' values (and derivatives)."""

    kind = "composed"

    def __init__(self, start, end, parts, fn, dfn=None, shape=None):
        self.parts = list(parts)
        self.fn = fn
        self.dfn = dfn
        if shape is None:
            probe = fn(*[p.value(np.array([start])) for p in self.parts])
            shape = probe.shape[1:]
        super().__init__(start, end, shape)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self.fn(*[p.value(t) for p in self.parts])

    def derivative(self, t):
        if self.dfn is None:
            return self._fd_derivative(t)
        t = np.asarray(t, dtype=float)
        vals = [p.value(t) for p in self.parts]
        ders = [p.derivative(t) for p in self.parts]
        return self.dfn(vals, ders)

    def restrict(self, start, end):
        return ComposedSegment(start, end, [p.restrict(start, end) for p in self.parts],
                               self.fn, self.dfn, self.shape)

    @property
    def kinks(self):
        out = [getattr(p, "kinks", np.empty(0)) for p in self.parts]
        return np.unique(np.concatenate(out)) if out else np.empty(0)


@dataclass(frozen=True)
class JumpRecord:
    time: float
    left_limit: np.ndarray
    point_value: np.ndarray
    right_limit: np.ndarray

    @property
    def left_jump(self):
        """``Q(t) - Q(t-)``."""
        return self.point_value - self.left_limit

    @property
    def right_jump(self):
        """``Q(t+) - Q(t)``."""
        return self.right_limit - self.point_value


@dataclass(frozen=True)
class VariationEstimate:
    """Partition sum of spectral-norm increments; a lower bound of the total variation."""

    value: float
    grid_spacing: float
    nodes: int

    def __float__(self):
        return float(self.value)


class PiecewiseMatrixFunction:
    """Matrix function tiled by segments, with optional point values at breakpoints.

    Parameters
    ----------
    segments : sequence of Segment
        Contiguous pieces covering the working interval, in time order.
    points : dict, optional
        Map from breakpoint time to the matrix value at exactly that time.
        Without an entry the value is taken from the segment to the right
        (half-open ownership).
    """

    def __init__(self, segments: Sequence[Segment], points=None):
        segs = list(segments)
        if not segs:
            raise ValueError("at least one segment required")
        shape = segs[0].shape
        for prev, nxt in zip(segs, segs[1:]):
            if nxt.start != prev.end:
                raise ValueError(
                    f"segments must tile the interval: gap/overlap at {prev.end} vs {nxt.start}")
        if any(s.shape != shape for s in segs):
            raise ShapeMismatch("all segments must share one shape")
        self.segments = segs
        self.shape = shape
        self._bounds = np.array([s.end for s in segs[:-1]], dtype=float)
        pts = {}
        for t, val in (points or {}).items():
            t = float(t)
            if not np.any(self._bounds == t):
                raise ValueError(f"point value at {t} is not at a breakpoint")
            val = np.asarray(val, dtype=complex).reshape(shape)
            pts[t] = val
        self.points = pts

    # ---- construction helpers -------------------------------------------------

    @classmethod
    def constant(cls, value, interval):
        value = np.atleast_2d(np.asarray(value, dtype=complex))
        entries = [[complex(v) for v in row] for row in value]
        return cls([ExpressionSegment(interval[0], interval[1], entries, validate=False)])

    @classmethod
    def from_expressions(cls, pieces, params=None, points=None):
        """``pieces`` is a list of ``(start, end, entry_table)``."""
        segs = [ExpressionSegment(a, b, tab, params) for a, b, tab in pieces]
        pts = None
        if points:
            pts = {}
            for t, tab in points.items():
                seg = ExpressionSegment(t - 1.0, t + 1.0, tab, params, validate=False)
                pts[t] = seg.value(np.array([t]))[0]
        return cls(segs, pts)

    @staticmethod
    def combine(funcs, fn, dfn=None, point_fn=None):
        """Pointwise combination ``fn(*values)`` on the common refinement.

        ``dfn(values, derivatives)`` gives the derivative (product rule etc.);
        if omitted, derivatives fall back to finite differences.
        """
        funcs = list(funcs)
        a = max(f.interval[0] for f in funcs)
        b = min(f.interval[1] for f in funcs)
        if not b > a:
            raise OutOfDomain("functions have no common interval")
        cuts = {a, b}
        for f in funcs:
            cuts.update(float(x) for x in f.breakpoints if a < x < b)
        cuts = sorted(cuts)
        segs = []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (lo + hi)
            parts = [f.segments[f._index_right(mid)].restrict(lo, hi) for f in funcs]
            segs.append(ComposedSegment(lo, hi, parts, fn, dfn))
        points = {}
        for t in cuts[1:-1]:
            if any(f.has_point(t) for f in funcs):
                vals = [f.evaluate(np.array([t])) for f in funcs]
                points[t] = (point_fn or fn)(*vals)[0]
        return PiecewiseMatrixFunction(segs, points)

    def restrict(self, a, b):
        """The same function on ``[a, b]``; overrides at the new ends are dropped."""
        lo, hi = self.interval
        a, b = float(a), float(b)
        if not (lo <= a < b <= hi):
            raise OutOfDomain(f"[{a}, {b}] is not a sub-interval of [{lo}, {hi}]")
        segs = [s.restrict(max(s.start, a), min(s.end, b)) for s in self.segments
                if min(s.end, b) > max(s.start, a)]
        return PiecewiseMatrixFunction(segs, {t: v for t, v in self.points.items() if a < t < b})

    def without_points(self):
        return PiecewiseMatrixFunction(self.segments)

    def with_points(self, points):
        merged = dict(self.points)
        merged.update(points)
        return PiecewiseMatrixFunction(self.segments, merged)

    # ---- queries ------------------------------------------------------------

    @property
    def interval(self):
        return (self.segments[0].start, self.segments[-1].end)

    @property
    def breakpoints(self) -> np.ndarray:
        return self._bounds.copy()

    @property
    def kinks(self) -> np.ndarray:
        """Interior times where the function is continuous but not smooth."""
        out = [getattr(s, "kinks", np.empty(0)) for s in self.segments]
        return np.unique(np.concatenate(out)) if out else np.empty(0)

    def is_breakpoint(self, t) -> bool:
        return bool(np.any(self._bounds == float(t)))

    def has_point(self, t) -> bool:
        return float(t) in self.points

    def _check_domain(self, t):
        a, b = self.interval
        slack = 1e-12 * max(1.0, b - a)
        if np.any(t < a - slack) or np.any(t > b + slack) or np.any(~np.isfinite(t)):
            bad = t[(t < a - slack) | (t > b + slack) | ~np.isfinite(t)]
            raise OutOfDomain(f"time {bad[0]} outside working interval [{a}, {b}]")
        return np.clip(t, a, b)

    def _index_right(self, t):
        return np.searchsorted(self._bounds, t, side="right")

    def _index_left(self, t):
        return np.searchsorted(self._bounds, t, side="left")

    def _eval_by(self, t, index, method="value"):
        out = np.empty((t.size,) + self.shape, dtype=complex)
        for k in np.unique(index):
            sel = index == k
            out[sel] = getattr(self.segments[k], method)(t[sel])
        return out

    def evaluate(self, t):
        """Point value(s) at ``t``; scalar input gives a single matrix."""
        ts, scalar = _as_times(t)
        ts = self._check_domain(ts)
        out = self._eval_by(ts, self._index_right(ts))
        # right endpoint belongs to the last segment's closure
        if self.points:
            for i, tt in enumerate(ts):
                if tt in self.points:
                    out[i] = self.points[tt]
        return out[0] if scalar else out

    __call__ = evaluate

    def left_limit(self, t):
        ts, scalar = _as_times(t)
        ts = self._check_domain(ts)
        if np.any(ts <= self.interval[0]):
            raise OutOfDomain("left limit undefined at the start of the interval")
        out = self._eval_by(ts, self._index_left(ts))
        return out[0] if scalar else out

    def right_limit(self, t):
        ts, scalar = _as_times(t)
        ts = self._check_domain(ts)
        if np.any(ts >= self.interval[1]):
            raise OutOfDomain("right limit undefined at the end of the interval")
        out = self._eval_by(ts, self._index_right(ts))
        return out[0] if scalar else out

    def one_sided_limits(self, t) -> JumpRecord:
        t = float(t)
        a, b = self.interval
        if not a < t < b:
            raise OutOfDomain(f"{t} is not interior to [{a}, {b}]")
        return JumpRecord(t, self.left_limit(t), self.evaluate(t), self.right_limit(t))

    def derivative(self, t):
        """Classical derivative; not defined at breakpoints."""
        ts, scalar = _as_times(t)
        ts = self._check_domain(ts)
        if np.any(np.isin(ts, self._bounds)):
            raise AtBreakpoint("derivative requested at a breakpoint; use one_sided_derivative")
        out = self._eval_by(ts, self._index_right(ts), "derivative")
        return out[0] if scalar else out

    def one_sided_derivative(self, t, side: int):
        """Derivative of the segment to the left (``side=-1``) or right (``+1``) of ``t``."""
        ts, scalar = _as_times(t)
        ts = self._check_domain(ts)
        idx = self._index_left(ts) if side < 0 else self._index_right(ts)
        out = self._eval_by(ts, idx, "derivative")
        return out[0] if scalar else out

    def jump_records(self):
        return [self.one_sided_limits(t) for t in self._bounds]

    def chain(self, grid):
        """Time-ordered samples over ``grid`` with one-sided limits at breakpoints.

        Returns ``(times, sides, values)`` where ``sides`` is -1 for a left
        limit, 0 for a point value and +1 for a right limit.  Breakpoints in
        the interior of the grid span are expanded into (left, point, right);
        at the first grid node only (point, right) and at the last only
        (left, point) are emitted.
        """
        grid = np.unique(self._check_domain(np.asarray(grid, dtype=float)))
        ts, sides = [], []
        first, last = grid[0], grid[-1]
        for t in grid:
            if self.is_breakpoint(t):
                if t > first:
                    ts.append(t)
                    sides.append(LEFT)
                ts.append(t)
                sides.append(POINT)
                if t < last:
                    ts.append(t)
                    sides.append(RIGHT)
            else:
                ts.append(t)
                sides.append(POINT)
        ts = np.array(ts)
        sides = np.array(sides, dtype=int)
        return ts, sides, self.sample(ts, sides)

    def sample(self, times, sides):
        """Values along an externally built chain of ``(time, side)`` pairs."""
        times = np.asarray(times, dtype=float)
        sides = np.asarray(sides, dtype=int)
        values = np.empty((len(times),) + self.shape, dtype=complex)
        for side, getter in ((LEFT, self.left_limit), (POINT, self.evaluate),
                             (RIGHT, self.right_limit)):
            sel = sides == side
            if np.any(sel):
                values[sel] = getter(times[sel])
        return values

    def total_variation(self, t0, t1, grid) -> VariationEstimate:
        grid = np.asarray(grid, dtype=float)
        inside = grid[(grid >= t0) & (grid <= t1)]
        inside = np.unique(np.concatenate([[t0, t1], inside]))
        missing = [bp for bp in self._bounds if t0 <= bp <= t1 and bp not in inside]
        if missing:
            raise ValueError(f"grid must contain breakpoints {missing}")
        _, _, vals = self.chain(inside)
        steps = np.diff(vals, axis=0)
        total = float(sum(np.linalg.norm(s, 2) for s in steps))
        spacing = float(np.max(np.diff(inside))) if inside.size > 1 else 0.0
        return VariationEstimate(total, spacing, int(inside.size))

    def smooth_cuts(self, a=None, b=None):
        """Breakpoints and kinks inside ``(a, b)``: mandatory integration step boundaries."""
        lo, hi = self.interval
        a = lo if a is None else a
        b = hi if b is None else b
        cuts = np.concatenate([self._bounds, self.kinks])
        return np.unique(cuts[(cuts > a) & (cuts < b)])

    def __repr__(self):
        a, b = self.interval
        return (f"PiecewiseMatrixFunction(shape={self.shape}, interval=[{a}, {b}], "
                f"breakpoints={self._bounds.tolist()})")


def evaluate(f: PiecewiseMatrixFunction, t):
    return f.evaluate(t)


def one_sided_limits(f: PiecewiseMatrixFunction, t) -> JumpRecord:
    return f.one_sided_limits(t)


def derivative(f: PiecewiseMatrixFunction, t):
    return f.derivative(t)


def total_variation(f: PiecewiseMatrixFunction, t0, t1, grid) -> VariationEstimate:
    return f.total_variation(t0, t1, grid)


def conj_t(x: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the trailing two axes."""
    return np.conj(np.swapaxes(x, -1, -2))


def congruence_fn(V: PiecewiseMatrixFunction, Q: PiecewiseMatrixFunction) -> PiecewiseMatrixFunction:
    """``V* Q V`` with the product-rule derivative."""
    if V.shape[0] != Q.shape[1] or Q.shape[0] != Q.shape[1]:
        raise ShapeMismatch(f"cannot form V*QV with V{V.shape} and Q{Q.shape}")

    def fn(v, q):
        return conj_t(v) @ q @ v

    def dfn(vals, ders):
        (v, q), (dv, dq) = vals, ders
        vh = conj_t(v)
        return conj_t(dv) @ q @ v + vh @ dq @ v + vh @ q @ dv

    return PiecewiseMatrixFunction.combine([V, Q], fn, dfn)


def product_fn(F: PiecewiseMatrixFunction, G: PiecewiseMatrixFunction) -> PiecewiseMatrixFunction:
    if F.shape[1] != G.shape[0]:
        raise ShapeMismatch(f"cannot multiply {F.shape} by {G.shape}")
    return PiecewiseMatrixFunction.combine(
        [F, G], lambda f, g: f @ g, lambda vals, ders: ders[0] @ vals[1] + vals[0] @ ders[1])


def map_fn(F: PiecewiseMatrixFunction, fn: Callable, dfn: Callable | None = None):
    """Apply ``fn`` pointwise; ``dfn(value, derivative)`` if known."""
    d = None if dfn is None else (lambda vals, ders: dfn(vals[0], ders[0]))
    return PiecewiseMatrixFunction.combine([F], fn, d)
