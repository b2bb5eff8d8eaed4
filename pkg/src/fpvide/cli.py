"""Command line entry point: solve, verify-examples, compare and transform."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .exact import EXACT
from .fltm import fltm_solve, solve_ode, transform_boundary, transform_problem
from .oracle import DirectSettings, compare, direct_solve
from .problemfile import ProblemFile, ProblemFileError, bundled_path, load_problem_file

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
DEFAULT_TOLERANCE = 1e-3
DEFAULT_DX, DEFAULT_DT = 0.02, 1e-4


def fmt(v: float) -> str:
    """12 significant digits, with negative zero printed as 0."""
    s = format(float(v), ".12g")
    return "0" if s == "-0" else s


def _problem(arg: str) -> ProblemFile:
    # a bare bundled name such as "example1" is accepted when no such file exists
    path = Path(arg)
    if not path.exists() and path.suffix == "" and path.parent == Path("."):
        try:
            path = bundled_path(arg)
        except ProblemFileError:
            pass
    return load_problem_file(path)


def _grids(pf: ProblemFile, args):
    g = pf.grids
    nx = args.nx or g.nx
    nt = args.nt or g.nt
    if nx < 2 or nt < 1:
        raise ValueError("need --nx >= 2 and --nt >= 1")
    x = np.linspace(pf.spec.x0, pf.spec.x1, nx)
    t0 = g.t0 if g.t0 is not None else pf.spec.T / nt
    t = np.linspace(t0, pf.spec.T, nt) if nt > 1 else np.array([pf.spec.T])
    return x, t, args.r_levels or g.r_levels


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def write_table(table, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["x", "t", "r", "lower", "upper"])
    for row in table.rows():
        w.writerow([fmt(v) for v in row])


def cmd_solve(args) -> int:
    pf = _problem(args.problem)
    x, t, nr = _grids(pf, args)
    table = fltm_solve(pf.spec, x, t, nr, pf.settings.solver(stehfest_n=args.stehfest_n))
    stream, close = _open_out(args.output)
    try:
        write_table(table, stream)
    finally:
        if close:
            stream.close()
    return EXIT_OK


def cmd_verify_examples(args) -> int:
    ok = True
    for name, (lower, upper) in EXACT.items():
        pf = load_problem_file(bundled_path(name))
        x, t, nr = _grids(pf, args)
        table = fltm_solve(pf.spec, x, t, nr, pf.settings.solver(stehfest_n=args.stehfest_n))
        err = table.max_abs_error(lower, upper)
        passed = err <= args.tolerance
        ok &= passed
        print(f"{name}: max-abs error {err:.3e} (tolerance {args.tolerance:g}) {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_compare(args) -> int:
    pf = _problem(args.problem)
    spec, st = pf.spec, pf.settings
    dx = args.dx or st.oracle_dx or DEFAULT_DX
    dt = args.dt or st.oracle_dt or DEFAULT_DT
    t_max = args.t_max or st.oracle_T or spec.T
    nx = args.nx or int(round((spec.x1 - spec.x0) / 0.1)) + 1
    nt = args.nt or 10
    x = np.linspace(spec.x0, spec.x1, nx)
    t = np.linspace(t_max / nt, t_max, nt)
    nr = args.r_levels or pf.grids.r_levels
    direct = direct_solve(spec, DirectSettings(dx, dt), nr, x_out=x, t_out=t, T=t_max)
    fl = fltm_solve(spec, x, t, nr, st.solver(stehfest_n=args.stehfest_n))
    metrics = compare(fl, direct)
    print(f"fltm vs direct (dx={dx:g}, dt={dt:g}, t in [{t[0]:g}, {t_max:g}])")
    print(metrics.table())
    if args.output:
        with open(args.output, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["x", "t", "r", "fltm_lower", "fltm_upper", "direct_lower", "direct_upper"])
            for a, b in zip(fl.rows(), direct.rows()):
                w.writerow([fmt(v) for v in a + b[3:]])
    if args.tolerance is not None and metrics.max_abs > args.tolerance:
        print(f"max-abs difference {metrics.max_abs:.3e} exceeds tolerance {args.tolerance:g}")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_transform(args) -> int:
    pf = _problem(args.problem)
    spec = pf.spec
    if not 0 <= args.r <= 1:
        raise ValueError(f"r must lie in [0, 1], got {args.r:g}")
    if not args.p > 0:
        raise ValueError(f"the Laplace parameter must be positive, got {args.p:g}")
    x = np.linspace(spec.x0, spec.x1, args.nx or pf.grids.nx)
    ts = pf.settings.solver(stehfest_n=args.stehfest_n)
    cols = dict(r=[args.r, args.r], p=args.p, branch=("lower", "upper"), settings=ts.transform)
    U = solve_ode(transform_problem(spec, **cols), transform_boundary(spec, **cols), x, ts.ode_steps)
    stream, close = _open_out(args.output)
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["x", "U_lower", "U_upper"])
        for xi, row in zip(x, U):
            w.writerow([fmt(xi), fmt(row[0]), fmt(row[1])])
    finally:
        if close:
            stream.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpvide", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver diagnostics")
    sub = ap.add_subparsers(dest="command", required=True)

    def grid_flags(p, tolerance=None):
        p.add_argument("--nx", type=int, help="number of x points")
        p.add_argument("--nt", type=int, help="number of t points")
        p.add_argument("--r-levels", type=int, help="number of membership levels")
        p.add_argument("--stehfest-n", type=int, help="Gaver-Stehfest order (even, 4..20)")
        p.add_argument("--tolerance", type=float, default=tolerance, help="max-abs error threshold")

    p = sub.add_parser("solve", help="solve a problem file and write a CSV table")
    p.add_argument("--problem", required=True, help="problem file, or a bundled name such as example1")
    p.add_argument("--output", help="CSV path (default: standard output)")
    grid_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify-examples", help="check the bundled examples against their closed forms")
    grid_flags(p, DEFAULT_TOLERANCE)
    p.set_defaults(func=cmd_verify_examples)

    p = sub.add_parser("compare", help="compare the transform solution with the direct time-stepping solver")
    p.add_argument("--problem", required=True)
    p.add_argument("--output", help="optional side-by-side CSV")
    p.add_argument("--dx", type=float, help="direct solver x step")
    p.add_argument("--dt", type=float, help="direct solver t step")
    p.add_argument("--t-max", type=float, help="last compared time")
    grid_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("transform", help="print the transformed solution U(x, p) at one membership level")
    p.add_argument("--problem", required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--output", help="CSV path (default: standard output)")
    grid_flags(p)
    p.set_defaults(func=cmd_transform)
    return ap


def _warning_line(message, category, filename, lineno, line=None):
    return f"fpvide: warning: {message}\n"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    warnings.formatwarning = _warning_line
    try:
        return args.func(args)
    except ValueError as e:         # problem files, specs, grids and arguments
        print(f"fpvide: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except BrokenPipeError:
        # output closed early, e.g. piped into head
        sys.stderr.close()
        return EXIT_OK
    except ArithmeticError as e:    # solver, transform and stability failures
        print(f"fpvide: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
