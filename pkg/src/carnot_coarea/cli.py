"""Command-line entry point.

Subcommands::

    carnot-coarea schema validate FILE
    carnot-coarea schema dump NAME [--out FILE]
    carnot-coarea group selftest --group G [--samples n] [--seed s]
    carnot-coarea fubini --group G --j J --f {one,x2sq,half} --box a1,b1,... [--grid n | --quad mc:n --seed s]
    carnot-coarea coarea run --group G --map NAME:k=v --j J --box a1,b1,... --seed s
                             [--p-grid n] [--quad grid:n|mc:n] [--out report.json] [--csv rows.csv]

Exit codes: 0 ok, 1 usage or configuration error, 2 coarea violation,
3 runtime failure.  All structured output is JSON; the report echoes the
parsed command line under ``config``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

from .group import selftest
from .harness import CoareaConfig, verify_coarea
from .maps import builtin_map
from .metric import QuadratureConfig
from .pansu import CompletionError, DifferentialError
from .projection import FUBINI_INTEGRANDS, fubini_check, fubini_integrand
from .schema import SchemaError, builtin_schema, dump_schema, load_schema, resolve_schema, validate
from .tracing import Region, TraceConfig

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; 2 is reserved for violations here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text, what):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated numbers, got {text!r}") from None


def _box(text, N):
    vals = _floats(text, "--box")
    if len(vals) != 2 * N:
        raise UsageError(f"--box needs {2 * N} numbers (a1,b1,...) for a group of dimension {N}, "
                         f"got {len(vals)}")
    box = [vals[2 * i:2 * i + 2] for i in range(N)]
    for i, (a, b) in enumerate(box, 1):
        if not a < b:
            raise UsageError(f"--box interval {i} is empty: [{a}, {b}]")
    return box


def _schema(spec):
    try:
        return resolve_schema(spec)
    except FileNotFoundError:
        raise UsageError(f"--group {spec!r} is neither a builtin schema nor a readable file") from None
    except SchemaError as exc:
        raise UsageError(f"--group {spec!r}: {exc}") from None


def _quad(text, seed):
    try:
        q = QuadratureConfig.parse(text, seed=seed if seed is not None else 0)
    except ValueError as exc:
        raise UsageError(f"--quad {text!r}: {exc}") from None
    if q.kind == "mc" and seed is None:
        raise UsageError("--seed is required for Monte Carlo quadrature")
    return q


def _j(j, group):
    if not 1 <= j <= group.n1:
        raise UsageError(f"--j must lie in 1..{group.n1} for {group.name}")
    return j


def _emit(payload, out):
    text = json.dumps(payload, sort_keys=True, indent=1)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _echo(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "workers")}


# --- subcommands ------------------------------------------------------------


def cmd_schema_validate(args):
    try:
        schema = load_schema(args.file)
        validate(schema)
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc.strerror}") from None
    except SchemaError as exc:
        print(f"invalid: {exc}")
        return EXIT_USAGE
    print(f"ok: {schema.name} (N={schema.N}, step={schema.step}, nu={schema.nu})")
    return EXIT_OK


def cmd_schema_dump(args):
    try:
        schema = builtin_schema(args.name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = dump_schema(schema, args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_group_selftest(args):
    schema = _schema(args.group)
    report = selftest(schema, samples=args.samples, seed=args.seed)
    _emit(report, args.out)
    return EXIT_OK


def cmd_fubini(args):
    schema = _schema(args.group)
    _j(args.j, schema)
    box = _box(args.box, schema.N)
    quad = _quad(args.quad, args.seed) if args.quad else QuadratureConfig("grid", args.grid)
    lhs, rhs, gap = fubini_check(fubini_integrand(args.f, box), box, args.j, schema, quad)
    _emit({
        "config": _echo(args),
        "schema": schema.name,
        "lhs": {"value": lhs.value, "err": lhs.err},
        "rhs": {"value": rhs.value, "err": rhs.err},
        "gap": gap,
        "quadrature": quad.as_dict(),
    }, args.out)
    return EXIT_OK


def cmd_coarea_run(args):
    schema = _schema(args.group)
    _j(args.j, schema)
    box = _box(args.box, schema.N)
    if args.seed is None:
        raise UsageError("--seed is required: the p-grid is jittered")
    if args.p_grid < 2:
        raise UsageError("--p-grid must be at least 2")
    quad = _quad(args.quad, args.seed)
    try:
        phi = builtin_map(args.map, schema)
    except ValueError as exc:
        raise UsageError(f"--map {args.map!r}: {exc}") from None
    offset = _floats(args.offset, "--offset") if args.offset else None
    if offset is not None and len(offset) != schema.N:
        raise UsageError(f"--offset needs {schema.N} numbers")
    trace = TraceConfig(tau_seed=args.tau_seed, tau_track=args.tau_track, method=args.method)
    config = CoareaConfig(
        p_grid=args.p_grid, scan=args.scan, quad=quad, seed=args.seed,
        tau_verdict=args.tau_verdict, tau_equality=args.tau_equality, trace=trace,
        workers=args.workers, corrupt_factor=args.corrupt_factor)
    report = verify_coarea(phi, Region(box, schema, offset), args.j, config)
    payload = report.to_dict()
    payload["config"] = _echo(args)
    _emit(payload, args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            dim = schema.N - 1
            w.writerow([f"p{i + 1}" for i in range(dim)] + ["length", "curves", "flags"])
            for d in report.diagnostics:
                w.writerow([repr(v) for v in d["p"]] + [repr(d["length"]), d["curves"],
                                                        ";".join(d["flags"])])
    print(f"{report.verdict}: lhs={report.lhs.value:.6g}±{report.lhs.err:.2g} "
          f"rhs={report.rhs.value:.6g}±{report.rhs.err:.2g}", file=sys.stderr)
    return EXIT_VIOLATION if report.verdict == "violation" else EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser():
    p = _Parser(prog="carnot-coarea", description="Coarea inequality checks on Carnot groups.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sch = sub.add_parser("schema", help="validate or dump group schemas")
    ssub = sch.add_subparsers(dest="action", required=True, parser_class=_Parser)
    v = ssub.add_parser("validate", help="check every schema invariant")
    v.add_argument("file")
    v.set_defaults(func=cmd_schema_validate)
    d = ssub.add_parser("dump", help="write a builtin schema as YAML")
    d.add_argument("name")
    d.add_argument("--out")
    d.set_defaults(func=cmd_schema_dump)

    grp = sub.add_parser("group", help="group-law diagnostics")
    gsub = grp.add_subparsers(dest="action", required=True, parser_class=_Parser)
    st = gsub.add_parser("selftest", help="max invariant defects on random points")
    st.add_argument("--group", required=True)
    st.add_argument("--samples", type=int, default=10_000)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--out")
    st.set_defaults(func=cmd_group_selftest)

    fb = sub.add_parser("fubini", help="compare the iterated and plain integrals")
    fb.add_argument("--group", required=True)
    fb.add_argument("--j", type=int, required=True)
    fb.add_argument("--f", choices=FUBINI_INTEGRANDS, default="one")
    fb.add_argument("--box", required=True)
    fb.add_argument("--grid", type=int, default=64)
    fb.add_argument("--quad", help="grid:n or mc:n (overrides --grid)")
    fb.add_argument("--seed", type=int)
    fb.add_argument("--out")
    fb.set_defaults(func=cmd_fubini)

    co = sub.add_parser("coarea", help="coarea inequality runs")
    csub = co.add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = csub.add_parser("run", help="estimate both sides and report a verdict")
    r.add_argument("--group", required=True)
    r.add_argument("--map", required=True, help="builtin map, e.g. shear:a=0.5")
    r.add_argument("--j", type=int, required=True)
    r.add_argument("--box", required=True)
    r.add_argument("--offset", help="left translate the box by this point")
    r.add_argument("--p-grid", type=int, default=64)
    r.add_argument("--scan", type=int, default=32, help="seed scan nodes per axis")
    r.add_argument("--quad", default="grid:32")
    r.add_argument("--seed", type=int)
    r.add_argument("--tau-verdict", type=float, default=CoareaConfig.tau_verdict)
    r.add_argument("--tau-equality", type=float, default=CoareaConfig.tau_equality)
    r.add_argument("--tau-seed", type=float, default=TraceConfig.tau_seed)
    r.add_argument("--tau-track", type=float, default=TraceConfig.tau_track)
    r.add_argument("--method", choices=("auto", "fd", "analytic"), default="auto")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.add_argument("--csv")
    r.add_argument("--corrupt-factor", type=float, default=1.0, help=argparse.SUPPRESS)
    r.set_defaults(func=cmd_coarea_run)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DifferentialError, CompletionError, FloatingPointError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
