"""Command-line front end.

    fibham bands    --lambda 8 --kmax 10
    fibham counts   --kmax 20
    fibham dims     --lambda 16 --level 20
    fibham dynamics --lambda 8 --nmax 2000 --tmin 100 --tmax 1e4
    fibham orbit    --E 9 --lambda 8 --steps 20

Output goes to --out, else to $FIBHAM_OUTPUT_DIR/<command>-<params>.<ext>,
else to stdout.  Exit codes: 0 success, 2 bad configuration, 3 computation
error, 4 I/O error; failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings

import numpy as np

from . import band_enum, combinatorics, dimension, dynamics, trace_core
from .errors import FibhamError
from .mp import MAX_PRECISION, START_PRECISION, fmt, to_mpfr
from .output import metadata, read_csv, render_csv, render_json, write_atomic

ENV_OUTPUT_DIR = "FIBHAM_OUTPUT_DIR"


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fail(kind: str, message: str, code: int, **extra) -> int:
    payload = {"error": kind, "message": message, "exit_code": code}
    payload.update(extra)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fibham", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, default_format="csv"):
        sp.add_argument("--format", choices=("csv", "json"), default=default_format)
        sp.add_argument("--out", help="output file (default: $%s or stdout)" % ENV_OUTPUT_DIR)
        sp.add_argument("--precision", type=int, default=START_PRECISION, help="bits")

    b = sub.add_parser("bands", help="enumerate the bands of sigma_0 .. sigma_kmax")
    b.add_argument("--lambda", dest="lam", type=float, required=True)
    b.add_argument("--kmax", type=int, required=True)
    b.add_argument("--levels", type=int, nargs="*", help="levels to write (default all)")
    b.add_argument("--resume", help="band file (JSON or CSV) written by an earlier 'bands' run")
    b.add_argument("--workers", type=int, default=1)
    common(b)

    c = sub.add_parser("counts", help="exact a_{k,m}, b_{k,m} table")
    c.add_argument("--kmax", type=int, required=True)
    c.add_argument("--envelope", type=int, metavar="K",
                   help="write the envelope report for row K instead of the table")
    common(c)

    d = sub.add_parser("dims", help="box-count fit and analytic dimension bounds")
    d.add_argument("--lambda", dest="lam", type=float, required=True)
    d.add_argument("--level", type=int, required=True, help="cover sigma_level u sigma_level+1")
    d.add_argument("--grid-points", type=int, default=dimension.DEFAULT_GRID_POINTS)
    common(d, "json")

    y = sub.add_parser("dynamics", help="time-averaged transport on a finite lattice")
    y.add_argument("--lambda", dest="lam", type=float, required=True)
    y.add_argument("--theta", type=float, default=0.0)
    y.add_argument("--nmax", type=int, default=2000)
    y.add_argument("--tmin", type=float, default=100.0)
    y.add_argument("--tmax", type=float, default=1e4)
    y.add_argument("--tpoints", type=int, default=7)
    y.add_argument("--p", type=float, nargs="+", default=[1, 2, 3, 4])
    y.add_argument("--half-line", action="store_true")
    common(y, "json")

    o = sub.add_parser("orbit", help="trace-map orbit of (E - lambda, E, 2) and membership")
    o.add_argument("--E", dest="energy", type=str, required=True)
    o.add_argument("--lambda", dest="lam", type=float, required=True)
    o.add_argument("--steps", type=int, default=20)
    o.add_argument("--kcap", type=int, default=trace_core.DEFAULT_K_CAP)
    common(o)
    return p


def validate(args) -> None:
    """Range checks mirroring the preconditions of the library calls."""
    if not 53 <= args.precision <= MAX_PRECISION:
        raise ConfigError(f"--precision must lie in [53, {MAX_PRECISION}]")
    cmd = args.command
    if cmd == "bands":
        if not args.lam > 4:
            raise ConfigError("bands needs --lambda > 4")
        if args.kmax < 2:
            raise ConfigError("--kmax must be >= 2")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        for k in args.levels or []:
            if not 0 <= k <= args.kmax:
                raise ConfigError(f"level {k} outside 0..{args.kmax}")
    elif cmd == "counts":
        if args.kmax < 1:
            raise ConfigError("--kmax must be >= 1")
        if args.envelope is not None and not 4 <= args.envelope:
            raise ConfigError("--envelope needs K >= 4")
    elif cmd == "dims":
        if not args.lam > 4:
            raise ConfigError("dims needs --lambda > 4")
        if args.level < 1:
            raise ConfigError("--level must be >= 1")
        if args.grid_points < 4:
            raise ConfigError("--grid-points must be >= 4")
    elif cmd == "dynamics":
        if args.lam < 0:
            raise ConfigError("--lambda must be >= 0")
        if not 0 <= args.theta < 1:
            raise ConfigError("--theta must lie in [0, 1)")
        if args.nmax < 2:
            raise ConfigError("--nmax must be >= 2")
        if not 0 < args.tmin < args.tmax:
            raise ConfigError("need 0 < --tmin < --tmax")
        if args.tpoints < 6:
            raise ConfigError("--tpoints must be >= 6")
        if any(p <= 0 for p in args.p):
            raise ConfigError("moments need p > 0")
    elif cmd == "orbit":
        if not args.lam > 0:
            raise ConfigError("orbit needs --lambda > 0")
        if args.steps < 0:
            raise ConfigError("--steps must be >= 0")
        if args.kcap < 2:
            raise ConfigError("--kcap must be >= 2")
        try:
            to_mpfr(args.energy)
        except ValueError as e:
            raise ConfigError(f"--E: {e}") from None
    if args.command == "bands" and args.resume and not os.path.isfile(args.resume):
        raise ConfigError(f"--resume file {args.resume!r} not found")


def _config_echo(args) -> dict:
    d = {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)}
    return json.loads(json.dumps(d))


def _default_name(args) -> str:
    parts = [args.command]
    for key in ("lam", "kmax", "level", "nmax", "theta", "energy"):
        v = getattr(args, key, None)
        if v is not None:
            parts.append(f"{key}{v}")
    return "-".join(parts) + "." + args.format


# -- commands -------------------------------------------------------------


def _num(x):
    """JSON-safe float."""
    x = float(x)
    return x if math.isfinite(x) else None


def cmd_bands(args, meta):
    resume = None
    if args.resume:
        with open(args.resume, encoding="utf-8") as fh:
            text = fh.read()
        if args.resume.endswith(".csv"):
            _, rows = read_csv(text)
            resume = band_enum.hierarchy_from_records(args.lam, rows)
        else:
            resume = band_enum.hierarchy_from_json(json.loads(text)["data"])
    h = band_enum.enumerate_bands(args.lam, args.kmax, args.precision, resume_from=resume,
                                  workers=args.workers)
    meta["precision_bits"] = max(h.level_precision)
    meta["level_precision"] = list(h.level_precision)
    levels = args.levels if args.levels else list(range(h.k_max + 1))
    if args.format == "csv":
        return render_csv(meta, band_enum.CSV_COLUMNS, band_enum.band_records(h, levels))
    data = band_enum.hierarchy_to_json(h)
    return render_json(meta, data)


def cmd_counts(args, meta):
    if args.envelope is not None:
        k = args.envelope
        rep = combinatorics.envelope_check(k, combinatorics.count_table(max(k, args.kmax)))
        if args.format == "json":
            return render_json(meta, rep.as_dict())
        rows = ({"m": m, "a": combinatorics.count_table(k).a(k, m), "ratio": repr(r)}
                for m, r in sorted(rep.ratios.items()))
        meta["summary"] = {key: v for key, v in rep.as_dict().items() if key != "ratios"}
        return render_csv(meta, ("m", "a", "ratio"), rows)
    t = combinatorics.count_table(args.kmax)
    if args.format == "json":
        rows = []
        for k in range(args.kmax + 1):
            rows.append({
                "k": k,
                "fibonacci": combinatorics.fibonacci(k),
                "a": {str(m): v for m, v in enumerate(t.a_rows[k]) if v},
                "b": {str(m): v for m, v in enumerate(t.b_rows[k]) if v},
            })
        return render_json(meta, rows)
    rows = ({"k": k, "m": m, "a": a, "b": b} for k, m, a, b in t.records())
    return render_csv(meta, ("k", "m", "a", "b"), rows)


def cmd_dims(args, meta):
    h = band_enum.enumerate_bands(args.lam, args.level + 1, args.precision)
    grid = dimension.default_grid(band_enum.cover_union(h, args.level), args.grid_points)
    rep = dimension.dimension_report(h, args.level, grid)
    meta["precision_bits"] = max(h.level_precision)
    if args.format == "json":
        return render_json(meta, rep.as_dict())
    meta["summary"] = {k: v for k, v in rep.as_dict().items() if k != "fit"}
    rows = ({"eps": repr(r["eps"]), "N": r["N"],
             "local_slope": "" if r["local_slope"] is None else repr(r["local_slope"])}
            for r in rep.fit.records())
    return render_csv(meta, ("eps", "N", "local_slope"), rows)


def cmd_dynamics(args, meta):
    H = dynamics.LatticeOperator(args.lam, args.theta, args.nmax, args.half_line)
    grid = list(np.geomspace(args.tmin, args.tmax, args.tpoints))
    p_list = [int(p) if float(p).is_integer() else p for p in args.p]
    res = dynamics.transport_exponents(H, p_list, grid)
    meta["precision_bits"] = 53
    if args.format == "json":
        return render_json(meta, res.as_dict())
    meta["summary"] = {"alpha_u_estimate": res.alpha_u_estimate,
                       "beta": {str(p): s for p, (s, _) in res.beta_fit.items()}}
    rows = ({"N": repr(N), "T": repr(T), "P": repr(P)} for (N, T), P in sorted(res.P_out.items()))
    return render_csv(meta, ("N", "T", "P"), rows)


def cmd_orbit(args, meta):
    E = to_mpfr(args.energy, args.precision)
    start = trace_core.SurfacePoint.on_fibonacci_line(E, args.lam, args.precision)
    escaped_at = None
    try:
        orbit = trace_core.trace_map_orbit(start, args.steps, args.precision)
    except FibhamError as e:
        if not hasattr(e, "orbit"):
            raise
        orbit, escaped_at = e.orbit, e.step
    verdict = trace_core.spectrum_membership(E, args.lam, args.kcap)
    meta["verdict"] = {"status": verdict.status, "escape_level": verdict.escape_level,
                       "k_cap": verdict.k_cap, "precision": verdict.precision,
                       "heuristic": verdict.heuristic}
    meta["orbit_escaped_at"] = escaped_at
    digits = max(17, args.precision // 3)
    rows = []
    for i, q in enumerate(orbit):
        rows.append({"step": i, "x": fmt(q.x, digits), "y": fmt(q.y, digits),
                     "z": fmt(q.z, digits),
                     "invariant": fmt(trace_core.fricke_invariant(q, args.precision), digits)})
    if args.format == "json":
        return render_json(meta, rows)
    return render_csv(meta, ("step", "x", "y", "z", "invariant"), rows)


COMMANDS = {
    "bands": cmd_bands,
    "counts": cmd_counts,
    "dims": cmd_dims,
    "dynamics": cmd_dynamics,
    "orbit": cmd_orbit,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        validate(args)
    except ConfigError as e:
        return _fail("config", str(e), 2)
    meta = metadata(args.command, _config_echo(args), args.precision)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            text = COMMANDS[args.command](args, meta)
        for w in caught:
            sys.stderr.write(f"warning: {w.category.__name__}: {w.message}\n")
    except FibhamError as e:
        return _fail(type(e).__name__, str(e), e.exit_code)
    except (ValueError, ArithmeticError) as e:
        return _fail(type(e).__name__, str(e), 3)
    target = args.out
    if target is None and os.environ.get(ENV_OUTPUT_DIR):
        target = os.path.join(os.environ[ENV_OUTPUT_DIR], _default_name(args))
    try:
        if target is None:
            sys.stdout.write(text)
        else:
            write_atomic(target, text)
    except OSError as e:
        return _fail("io", str(e), 4)
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
