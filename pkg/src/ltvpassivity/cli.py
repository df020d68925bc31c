"""``ltvpass`` command line front end.

Subcommands ``simulate``, ``audit``, ``nsd``, ``avstor`` and ``corpus``.
JSON reports go to stdout (or ``--out-dir``) with sorted keys and no timing
data, so identical inputs and seeds give byte-identical files.

Exit codes: 0 pass, 1 usage or parse error, 2 necessary-condition failure,
3 dissipation violation or unbounded available storage, 4 inconclusive.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import _expr, corpus
from .avstor import AvailableStorageSampler, HorizonPolicy, polarization_recover
from .errors import (ChainViolation, InconsistentSampler, LtvPassivityError, NonMonotoneRank,
                     NotStorage, ParseError)
from .matfun import make_grid
from .odeflow import (ATOL, RTOL, LtvSystem, PiecewiseConstantInput, solve_inhomogeneous,
                      supply_integral)
from .storage import (DEFAULT_SEED, dissipation_check, pointwise_supply_check,
                      storage_regularity_audit)
from .nsd import nsd_unitary

__all__ = ["main", "build_parser"]

EXIT_PASS, EXIT_USAGE, EXIT_NECESSARY, EXIT_VIOLATION, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


# -- plumbing -----------------------------------------------------------------

def _jsonable(obj):
    """Plain JSON types: complex as ``[re, im]``, non-finite floats as ``None``."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_jsonable(float(obj.real)), _jsonable(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(payload) -> str:
    return json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"


def _parse_interval(text):
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--interval expects a:b, got {text!r}") from None
    if not b > a:
        raise UsageError(f"--interval {text} is empty")
    return a, b


def _parse_vector(text, flag):
    out = []
    for item in text.split(","):
        try:
            node = _expr.parse_expr(item.strip())
        except ParseError as exc:
            raise UsageError(f"{flag}: {exc}") from None
        if not isinstance(node, _expr.Const):
            raise UsageError(f"{flag}: {item.strip()!r} is not a constant")
        out.append(complex(node.value))
    return np.array(out, dtype=complex)


def _load_input(text, m, span):
    """``--input`` is a constant vector or ``@file.csv`` with rows ``t,u1,...,um``."""
    if text is None:
        return PiecewiseConstantInput.constant(np.zeros(m), span)
    if not text.startswith("@"):
        u = _parse_vector(text, "--input")
        if u.size != m:
            raise UsageError(f"--input needs {m} entries, got {u.size}")
        return PiecewiseConstantInput.constant(u, span)
    path = Path(text[1:])
    try:
        rows = [r for r in csv.reader(path.read_text().splitlines())
                if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise UsageError(f"cannot read input file {path}: {exc.strerror}") from None
    times, vals = [], []
    for k, r in enumerate(rows, 1):
        if len(r) != m + 1:
            raise ParseError(f"expected {m + 1} columns, got {len(r)}", k, str(path))
        times.append(float(r[0]))
        vals.append(_parse_vector(",".join(r[1:]), "--input"))
    if not times or times[0] > span[0]:
        raise UsageError("input file must start at or before the simulation start")
    edges = [t for t in times if t < span[1]]
    vals = vals[:len(edges)]
    edges[0] = max(edges[0], span[0])
    return PiecewiseConstantInput(edges + [span[1]], np.array(vals))


def _restrict_system(s: LtvSystem, a, b) -> LtvSystem:
    if (a, b) == tuple(s.interval):
        return s
    return LtvSystem(s.A.restrict(a, b), s.B.restrict(a, b), s.C.restrict(a, b),
                     s.D.restrict(a, b), s.name)


class Context:
    """Everything the subcommands share: system, optional storage, grid, tolerances."""

    def __init__(self, args, need_storage=False):
        defn = corpus.resolve(args.system)
        system = defn.system()
        Q = defn.storage
        if args.storage:
            sdef = corpus.resolve(args.storage)
            if sdef.storage is None:
                raise ParseError("storage file defines no function Q", path=args.storage)
            Q = sdef.storage
        if need_storage and Q is None:
            raise UsageError("a storage candidate Q is required (--storage or Q in the system file)")
        a, b = system.interval
        if Q is not None:
            a, b = max(a, Q.interval[0]), min(b, Q.interval[1])
        if args.interval:
            a, b = _parse_interval(args.interval)
        self.system = _restrict_system(system, a, b)
        self.Q = None if Q is None else (Q if tuple(Q.interval) == (a, b) else Q.restrict(a, b))
        self.interval = (a, b)
        bps = list(self.system.breakpoints)
        if self.Q is not None:
            bps += list(self.Q.breakpoints)
        self.grid = make_grid((a, b), args.grid, bps)
        self.name = defn.name
        self.source = args.system
        self.args = args

    def header(self, command):
        return {"command": command, "system": self.name, "source": self.source,
                "interval": list(self.interval), "grid_nodes": int(len(self.grid)),
                "n": self.system.n, "m": self.system.m}


def _write(args, filename, text):
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text)


def _matrix_rows(times, sides, mats):
    """Long-format CSV of a sampled matrix function: ``t,side,i,j,re,im``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "side", "i", "j", "re", "im"])
    for t, s, M in zip(times, sides, mats):
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                w.writerow([repr(float(t)), int(s), i + 1, j + 1,
                            repr(float(M[i, j].real)), repr(float(M[i, j].imag))])
    return buf.getvalue()


def _emit(args, payload, csv_text=None, stem="report"):
    text = dumps(payload)
    _write(args, f"{stem}.json", text)
    if args.format == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(text)


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    ctx = Context(args)
    s = ctx.system
    a, b = ctx.interval
    t0 = a if args.t0 is None else float(args.t0)
    if not a <= t0 < b:
        raise UsageError(f"--t0 {t0} outside [{a}, {b})")
    x0 = np.zeros(s.n) if args.x0 is None else _parse_vector(args.x0, "--x0")
    if x0.size != s.n:
        raise UsageError(f"--x0 needs {s.n} entries, got {x0.size}")
    grid = ctx.grid[ctx.grid >= t0]
    if grid[0] > t0:
        grid = np.concatenate([[t0], grid])
    u = _load_input(args.input, s.m, (t0, b))
    traj = solve_inhomogeneous(s, t0, x0, u, span=(t0, b), grid=grid,
                               rtol=args.rtol, atol=args.atol)
    inc = [supply_integral(traj, traj.grid[k], traj.grid[k + 1]) for k in range(len(traj.grid) - 1)]
    extra = {"supply": np.concatenate([[0.0], np.cumsum(inc)])}
    if ctx.Q is not None:
        Qv = ctx.Q.evaluate(traj.grid)
        extra["storage"] = 0.5 * np.einsum("ki,kij,kj->k", traj.x.conj(), Qv, traj.x).real
    text = traj.to_csv(extra=extra)
    _write(args, "trajectory.csv", text)
    payload = ctx.header("simulate")
    payload.update({"t0": t0, "x0": x0, "final_state": traj.x[-1],
                    "supply_total": float(extra["supply"][-1]), "nodes": int(len(traj.grid))})
    if "storage" in extra:
        payload["storage_initial"] = float(extra["storage"][0])
        payload["storage_final"] = float(extra["storage"][-1])
    if args.format == "csv":
        _write(args, "report.json", dumps(payload))
        sys.stdout.write(text)
    else:
        _emit(args, payload)
    return EXIT_PASS


def cmd_audit(args) -> int:
    ctx = Context(args, need_storage=True)
    audit = storage_regularity_audit(ctx.Q, ctx.system, ctx.grid, args.t0,
                                     args.tol_psd, args.tol_rank)
    supply = pointwise_supply_check(ctx.system, ctx.Q, ctx.grid)
    diss = dissipation_check(ctx.system, ctx.Q, trials=args.trials, seed=args.seed,
                             tol_rel=args.tol_diss)
    if not audit.passed:
        code = EXIT_NECESSARY
    elif diss.verdict == "violated":
        code = EXIT_VIOLATION
    elif diss.verdict != "holds":
        code = EXIT_INCONCLUSIVE
    else:
        code = EXIT_PASS
    payload = ctx.header("audit")
    payload.update({"necessary_conditions": audit.to_dict(),
                    "pointwise_supply": supply.to_dict(),
                    "dissipation": diss.to_dict(),
                    "exit_code": code})
    if not audit.passed:
        stage = audit.stages.get(audit.failed_stage, {})
        payload["witness"] = stage.get("witness") or stage.get("witnesses") or stage.get("error")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "t0", "t1", "lhs", "rhs", "slack", "status"])
    for t in diss.trials:
        w.writerow([t.trial_id, repr(t.t0), repr(t.t1), repr(t.lhs), repr(t.rhs), repr(t.slack), t.status])
    _write(args, "trials.csv", buf.getvalue())
    _emit(args, payload, buf.getvalue())
    return code


def cmd_nsd(args) -> int:
    ctx = Context(args, need_storage=True)
    payload = ctx.header("nsd")
    try:
        res = nsd_unitary(ctx.system, ctx.Q, args.t0, ctx.grid, args.tol_psd, args.tol_rank)
    except (NotStorage, ChainViolation, NonMonotoneRank) as exc:
        payload.update({"error": type(exc).__name__, "message": str(exc), "exit_code": EXIT_NECESSARY})
        report = getattr(exc, "report", None)
        if report is not None and hasattr(report, "to_dict"):
            payload["monotonicity"] = report.to_dict()
        _emit(args, payload)
        return EXIT_NECESSARY
    payload.update(res.manifest())
    payload["V0"] = res.V0
    payload["exit_code"] = EXIT_PASS
    v0 = io.StringIO()
    w = csv.writer(v0, lineterminator="\n")
    w.writerow(["i", "j", "re", "im"])
    for i in range(res.V0.shape[0]):
        for j in range(res.V0.shape[1]):
            w.writerow([i + 1, j + 1, repr(float(res.V0[i, j].real)), repr(float(res.V0[i, j].imag))])
    _write(args, "V0.csv", v0.getvalue())
    _write(args, "U.csv", _matrix_rows(res.times, res.sides, res.U))
    _write(args, "L.csv", _matrix_rows(res.times, res.sides, res.L))
    tilde11 = _matrix_rows(res.times, res.sides, res.tilde11())
    _write(args, "tilde11.csv", tilde11)
    _emit(args, payload, tilde11, stem="manifest")
    return EXIT_PASS


def cmd_avstor(args) -> int:
    ctx = Context(args)
    s = ctx.system
    a, _ = ctx.interval
    t0 = a if args.t0 is None else float(args.t0)
    policy = HorizonPolicy(horizon0=args.horizon0, max_horizon=args.max_horizon,
                           min_cells=args.min_cells, max_cells=args.max_cells,
                           eps_conv=args.eps_conv,
                           tau_psd=1e-9 if args.tol_psd is None else args.tol_psd)
    probes = args.x0 or ([",".join(["1"] + ["0"] * (s.n - 1))] if not args.polarize else [])
    sampler = AvailableStorageSampler(s, t0, policy)
    estimates = []
    for text in probes:
        x0 = _parse_vector(text, "--x0")
        if x0.size != s.n:
            raise UsageError(f"--x0 needs {s.n} entries, got {x0.size}")
        estimates.append(sampler.estimate(x0))
    payload = ctx.header("avstor")
    payload["t0"] = t0
    payload["estimates"] = [e.to_dict() for e in estimates]
    unbounded = any(e.unbounded for e in estimates)
    converged = all(e.converged for e in estimates)
    if args.polarize and not unbounded:
        try:
            Qa, resid = polarization_recover(sampler, s.n)
            payload["Q_a"] = {"matrix": Qa, "hermitian_residual": resid}
        except InconsistentSampler as exc:
            payload["Q_a"] = {"error": str(exc)}
            converged = False
    code = EXIT_VIOLATION if unbounded else (EXIT_PASS if converged else EXIT_INCONCLUSIVE)
    payload["exit_code"] = code
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["probe", "horizon", "cells", "value", "unbounded", "hessian_min", "hessian_max"])
    for p, e in enumerate(estimates):
        for r in e.table:
            w.writerow([p, repr(r.horizon), r.cells, "" if r.unbounded else repr(r.value),
                        int(r.unbounded), repr(float(r.hess_min)), repr(float(r.hess_max))])
    _write(args, "horizons.csv", buf.getvalue())
    _emit(args, payload, buf.getvalue())
    return code


def cmd_corpus(args) -> int:
    items = corpus.names()
    if args.format == "json":
        sys.stdout.write(dumps({"corpus": items}))
    else:
        sys.stdout.write("".join(f"corpus:{n}\n" for n in items))
    return EXIT_PASS


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", required=True, help="definition file or corpus:NAME")
    common.add_argument("--storage", help="file (or corpus:NAME) whose function Q is the candidate")
    common.add_argument("--interval", help="working window a:b inside the definition interval")
    common.add_argument("--grid", type=int, default=401, help="uniform grid nodes (breakpoints added)")
    common.add_argument("--tol-psd", type=float, default=None, help="Loewner tolerance override")
    common.add_argument("--tol-rank", type=float, default=None, help="absolute rank threshold override")
    common.add_argument("--tol-diss", type=float, default=1e-6, help="relative dissipation tolerance")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--out-dir", help="also write report and CSV files here")
    common.add_argument("--format", choices=("json", "csv"), default=None,
                        help="stdout format (simulate: csv, others: json)")
    common.add_argument("--t0", type=float, default=None, help="anchor time (default: window start)")

    p = argparse.ArgumentParser(prog="ltvpass", description="Passivity analysis of LTV systems.")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="integrate one trajectory")
    sim.add_argument("--x0", help="initial state, comma separated (complex entries allowed)")
    sim.add_argument("--input", help="constant input vector or @file.csv with rows t,u1,..,um")
    sim.add_argument("--rtol", type=float, default=RTOL)
    sim.add_argument("--atol", type=float, default=ATOL)
    sim.set_defaults(func=cmd_simulate, default_format="csv")

    aud = sub.add_parser("audit", parents=[common], help="necessary conditions plus dissipation trials")
    aud.add_argument("--trials", type=int, default=200)
    aud.set_defaults(func=cmd_audit)

    nsd = sub.add_parser("nsd", parents=[common], help="null space decomposition of Q")
    nsd.set_defaults(func=cmd_nsd)

    av = sub.add_parser("avstor", parents=[common], help="available storage estimate")
    av.add_argument("--x0", action="append", help="probe state; repeat for several probes")
    av.add_argument("--polarize", action="store_true", help="recover Q_a from basis combinations")
    av.add_argument("--horizon0", type=float, default=1.0)
    av.add_argument("--max-horizon", type=float, default=16.0)
    av.add_argument("--min-cells", type=int, default=16)
    av.add_argument("--max-cells", type=int, default=256)
    av.add_argument("--eps-conv", type=float, default=1e-3)
    av.set_defaults(func=cmd_avstor)

    cor = sub.add_parser("corpus", help="list bundled systems")
    cor.add_argument("--format", choices=("json", "text"), default="text")
    cor.set_defaults(func=cmd_corpus)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_USAGE
    if getattr(args, "format", None) is None:
        args.format = getattr(args, "default_format", "json")
    try:
        return args.func(args)
    except (UsageError, ParseError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) else str(exc)
        print(f"ltvpass: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except LtvPassivityError as exc:
        print(f"ltvpass: inconclusive: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
