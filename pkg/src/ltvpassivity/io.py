"""YAML system-definition files.

Layout::

    name: msd
    interval: [-1, 3]
    parameters: {m: 1, b: 1}          # optional named constants
    functions:
      A:
        segments:
          - interval: [-1, 0]
            entries: [["0", "1/m"], ["-1", "-b/m"]]
          - interval: [0, 3]
            samples:                   # linear interpolation instead of entries
              times: [0, 1.5, 3]
              values: [[[0, 1], [-1, -1]], [[0, 1], [-0.5, -1]], [[0, 1], [0, -1]]]
        points:                        # optional values exactly at breakpoints
          - time: 0
            entries: [["0", "1"], ["-2", "-1"]]
      B: {constant: [[0], [1]]}       # shorthand for one segment on the interval
      C: {constant: [[0, "1/m"]]}
      D: {constant: [[0]]}
      Q: ...                           # optional storage candidate

Entries follow the grammar of :mod:`._expr`.  Every error carries the file
path and line number.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from . import _expr
from .errors import LtvPassivityError, ParseError
from .matfun import ExpressionSegment, PiecewiseMatrixFunction, SampledSegment
from .odeflow import LtvSystem

__all__ = ["load_definition", "parse_definition", "load_system", "dump_definition",
           "SystemDefinition"]


class _Map(dict):
    line = None


class _Seq(list):
    line = None


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    out = _Map(loader.construct_mapping(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_sequence(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


class SystemDefinition:
    """Parsed file: the functions by name plus metadata."""

    def __init__(self, name, interval, functions, parameters=None, path=None):
        self.name = name
        self.interval = interval
        self.functions = functions
        self.parameters = parameters or {}
        self.path = path

    def system(self) -> LtvSystem:
        missing = [k for k in "ABCD" if k not in self.functions]
        if missing:
            raise ParseError(f"system needs functions {missing}", path=self.path)
        f = self.functions
        return LtvSystem(f["A"], f["B"], f["C"], f["D"], self.name)

    @property
    def storage(self):
        return self.functions.get("Q")


def _line(obj, fallback=None):
    return getattr(obj, "line", None) or fallback


def _number(x, where, path):
    if isinstance(x, bool):
        raise ParseError("booleans are not numbers", where, path)
    if isinstance(x, (int, float)):
        return float(x)
    if isinstance(x, str):
        try:
            node = _expr.parse_expr(x)
        except ParseError as exc:
            raise ParseError(str(exc), where, path) from None
        if isinstance(node, _expr.Const) and node.value.imag == 0:
            return float(node.value.real)
    raise ParseError(f"expected a real number, got {x!r}", where, path)


def _interval(obj, where, path):
    if not isinstance(obj, list) or len(obj) != 2:
        raise ParseError("interval must be a two-element list [a, b]", _line(obj, where), path)
    a, b = (_number(v, _line(obj, where), path) for v in obj)
    if not b > a:
        raise ParseError(f"empty interval [{a}, {b}]", _line(obj, where), path)
    return a, b


def _table(obj, where, path):
    if not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj):
        raise ParseError("entries must be a list of rows", _line(obj, where), path)
    if len({len(r) for r in obj}) != 1 or not obj[0]:
        raise ParseError("entry rows must be non-empty and of equal length", _line(obj, where), path)
    return obj


def _complex_matrix(tab, params, where, path):
    seg = _expr_segment(0.0, 1.0, tab, params, where, path, validate=False)
    return seg.value(np.array([0.0]))[0]


def _expr_segment(a, b, tab, params, where, path, validate=True):
    try:
        return ExpressionSegment(a, b, tab, params, validate=validate)
    except ParseError as exc:
        raise ParseError(str(exc), where, path) from None


def _parse_function(name, spec, interval, params, path):
    where = _line(spec)
    if not isinstance(spec, dict):
        raise ParseError(f"function {name} must be a mapping", where, path)
    unknown = set(spec) - {"segments", "points", "constant"}
    if unknown:
        raise ParseError(f"function {name}: unknown keys {sorted(unknown)}", where, path)
    if "constant" in spec:
        if "segments" in spec:
            raise ParseError(f"function {name}: use either 'constant' or 'segments'", where, path)
        tab = _table(spec["constant"], where, path)
        segs = [_expr_segment(interval[0], interval[1], tab, params, _line(spec["constant"], where), path)]
    else:
        raw = spec.get("segments")
        if not isinstance(raw, list) or not raw:
            raise ParseError(f"function {name} needs a non-empty 'segments' list", where, path)
        segs = []
        for item in raw:
            iw = _line(item, where)
            if not isinstance(item, dict):
                raise ParseError("each segment must be a mapping", iw, path)
            extra = set(item) - {"interval", "entries", "samples"}
            if extra:
                raise ParseError(f"unknown segment keys {sorted(extra)}", iw, path)
            a, b = _interval(item.get("interval"), iw, path)
            if ("entries" in item) == ("samples" in item):
                raise ParseError("a segment needs exactly one of 'entries' or 'samples'", iw, path)
            if "entries" in item:
                segs.append(_expr_segment(a, b, _table(item["entries"], iw, path), params,
                                          _line(item["entries"], iw), path))
            else:
                smp = item["samples"]
                sw = _line(smp, iw)
                if not isinstance(smp, dict) or set(smp) != {"times", "values"}:
                    raise ParseError("samples need exactly 'times' and 'values'", sw, path)
                times = [_number(t, sw, path) for t in smp["times"]]
                vals = [_complex_matrix(_table(v, sw, path), params, sw, path) for v in smp["values"]]
                try:
                    segs.append(SampledSegment(a, b, times, np.array(vals)))
                except LtvPassivityError as exc:
                    raise ParseError(str(exc), sw, path) from None
    if segs[0].start != interval[0] or segs[-1].end != interval[1]:
        raise ParseError(f"function {name} must cover [{interval[0]}, {interval[1]}], "
                         f"got [{segs[0].start}, {segs[-1].end}]", where, path)
    points = {}
    for item in spec.get("points") or []:
        pw = _line(item, where)
        if not isinstance(item, dict) or set(item) != {"time", "entries"}:
            raise ParseError("point overrides need exactly 'time' and 'entries'", pw, path)
        points[_number(item["time"], pw, path)] = _complex_matrix(
            _table(item["entries"], pw, path), params, pw, path)
    try:
        return PiecewiseMatrixFunction(segs, points)
    except (ValueError, LtvPassivityError) as exc:
        raise ParseError(f"function {name}: {exc}", where, path) from None


def parse_definition(text: str, path=None) -> SystemDefinition:
    """Parse YAML text into a :class:`SystemDefinition`."""
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                         mark.line + 1 if mark else None, path) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be a mapping", 1, path)
    unknown = set(doc) - {"name", "interval", "parameters", "functions", "description"}
    if unknown:
        raise ParseError(f"unknown top-level keys {sorted(unknown)}", _line(doc, 1), path)
    interval = _interval(doc.get("interval"), _line(doc, 1), path)
    params = {}
    for k, v in (doc.get("parameters") or {}).items():
        if k in ("t", "i", "j") or not str(k).isidentifier():
            raise ParseError(f"invalid parameter name {k!r}", _line(doc.get("parameters")), path)
        params[str(k)] = _number(v, _line(doc.get("parameters")), path)
    funcs = doc.get("functions")
    if not isinstance(funcs, dict) or not funcs:
        raise ParseError("'functions' must be a non-empty mapping", _line(doc, 1), path)
    bad = set(funcs) - set("ABCDQ")
    if bad:
        raise ParseError(f"unknown function names {sorted(bad)}", _line(funcs), path)
    parsed = {k: _parse_function(k, v, interval, params, path) for k, v in funcs.items()}
    return SystemDefinition(doc.get("name"), interval, parsed, params, path)


def load_definition(path) -> SystemDefinition:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path=str(path)) from None
    return parse_definition(text, str(path))


def load_system(path) -> LtvSystem:
    return load_definition(path).system()


def _entry(z: complex):
    z = complex(z)
    if z.imag == 0:
        return float(z.real)
    return _expr.to_source(_expr.Const(z))


def _dump_function(f: PiecewiseMatrixFunction):
    segs = []
    for s in f.segments:
        item = {"interval": [s.start, s.end]}
        if isinstance(s, ExpressionSegment):
            item["entries"] = [[_expr.to_source(e) for e in row] for row in s.entries]
        elif isinstance(s, SampledSegment):
            item["samples"] = {"times": s.times.tolist(),
                               "values": [[[_entry(z) for z in row] for row in M] for M in s.values]}
        else:
            raise ValueError(f"cannot serialize a {s.kind} segment")
        segs.append(item)
    out = {"segments": segs}
    if f.points:
        out["points"] = [{"time": t, "entries": [[_entry(z) for z in row] for row in M]}
                         for t, M in sorted(f.points.items())]
    return out


def dump_definition(defn: SystemDefinition) -> str:
    """Serialize back to YAML; parameters are already substituted."""
    doc = {"name": defn.name, "interval": list(defn.interval),
           "functions": {k: _dump_function(v) for k, v in defn.functions.items()}}
    return yaml.safe_dump(doc, sort_keys=True)
