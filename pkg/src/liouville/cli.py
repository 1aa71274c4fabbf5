"""Command line front end.

Exit codes: 0 success, 1 mathematical failure reported as data (hypotheses
fail, degree requested on a critical set, Picard solve out of iterations,
domain errors), 2 usage errors (bad arguments, malformed or ill-typed JSON).
All indices in inputs and outputs are 0-based.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys

import numpy as np

from . import energy_geometry as eg
from . import mean_field as mf
from . import radial_solver as rs
from . import sampling
from .errors import LiouvilleError, MaxIterExceeded
from .matrix_core import build_matrix, check_hypotheses, decompose_blocks, invert
from .serialize import csv_line, dumps, format_float, loads

SUBCOMMANDS = ("check-matrix", "classify", "degree", "e-point", "radial", "sweep",
               "epsilon-family", "mf-solve")

EXIT_OK, EXIT_MATH, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_input(path):
    if path in (None, "-"):
        text = sys.stdin.read()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc.strerror}")
    try:
        return loads(text)
    except ValueError as exc:
        raise UsageError(f"malformed JSON input: {exc}")


class _Output:
    """Writes to a file or stdout, flushing after every chunk."""

    def __init__(self, path):
        self.path = path
        self.fh = sys.stdout if path in (None, "-") else open(path, "w")

    def write(self, text):
        self.fh.write(text)
        self.fh.flush()

    def close(self):
        if self.fh is not sys.stdout:
            self.fh.close()


def _get(doc, key, kind=None, default=...):
    if not isinstance(doc, dict):
        raise UsageError("input must be a JSON object")
    if key not in doc:
        if default is ...:
            raise UsageError(f"missing key {key!r}")
        return default
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise UsageError(f"key {key!r} has the wrong type")
    return val


def _matrix_from(doc, key="A"):
    """Matrix either inline under ``key`` or as ``{"n": int, "a": [[...]]}``."""
    raw = doc.get(key) if isinstance(doc, dict) else None
    if isinstance(raw, dict):
        doc, raw = raw, None
    if raw is None:
        raw = _get(doc, "a", list)
        n = _get(doc, "n", int, None)
        if n is not None and len(raw) != n:
            raise UsageError(f"'n' is {n} but 'a' has {len(raw)} rows")
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise UsageError("matrix entries must be numbers")
    sym_tol = float(doc.get("sym_tol", 1e-12))
    return build_matrix(arr, sym_tol)


def _float_list(doc, key):
    val = _get(doc, key, list)
    try:
        return np.array(val, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise UsageError(f"{key!r} must be a list of numbers")


def _radial_options(doc):
    raw = _get(doc, "options", dict, {})
    fields = rs.RadialOptions.__dataclass_fields__
    unknown = set(raw) - set(fields)
    if unknown:
        raise UsageError(f"unknown options {sorted(unknown)}")
    try:
        return rs.RadialOptions(**{k: (int(v) if k == "max_steps" else float(v)) for k, v in raw.items()})
    except (TypeError, ValueError):
        raise UsageError("options must be numbers")


# -- subcommands ---------------------------------------------------------------

def cmd_check_matrix(args, out):
    doc = _read_input(args.input)
    A = _matrix_from(doc)
    zero_tol = doc.get("zero_tol")
    report = check_hypotheses(A, zero_tol)
    result = {"n": A.n}
    result.update(report.to_dict())
    try:
        inv = invert(A)
        result["inverse"] = inv.inverse_entries
        result["cond_estimate"] = inv.cond_estimate
    except LiouvilleError:
        result["inverse"] = None
        result["cond_estimate"] = None
    result["blocks"] = [list(b) for b in decompose_blocks(A, zero_tol).blocks]
    if args.property_trials:
        rng = np.random.default_rng(args.seed)
        sizes = (A.n,) if 2 <= A.n <= 4 else (2, 3, 4)
        suites = {}
        for name, fn in (("dominance", sampling.dominance_suite),
                         ("subset_positivity", sampling.subset_positivity_suite),
                         ("e_point", sampling.e_point_suite)):
            res = fn(rng, args.property_trials, sizes=sizes)
            suites[name] = {"trials": res["trials"], "exceptions": res["exceptions"]}
        result["property_suites"] = {"seed": args.seed, "sizes": list(sizes), **suites}
    out.write(dumps(result))
    return EXIT_OK if report.h1_pass and report.h2_pass else EXIT_MATH


def cmd_classify(args, out):
    doc = _read_input(args.input)
    A = _matrix_from(doc)
    rho = _float_list(doc, "rho")
    pt = eg.classify_rho(A, rho, float(doc.get("rel_tol", 1e-9)))
    result = {"classification": pt.classification.value, "N": pt.N, "q": pt.q}
    result["in_gamma"] = eg.in_gamma(A, rho) if np.all(rho > 0) else None
    out.write(dumps(result))
    return EXIT_OK


def _surface_from(doc):
    s = _get(doc, "surface", dict)
    kind = _get(s, "kind", str)
    if kind == "closed":
        return eg.SurfaceSpec.closed(int(_get(s, "genus", int)))
    if kind == "planar":
        return eg.SurfaceSpec.planar(int(_get(s, "holes", int)))
    raise UsageError(f"unknown surface kind {kind!r}")


def cmd_degree(args, out):
    if args.input is None:
        if args.chi is None or args.N is None:
            raise UsageError("degree needs --chi and --N, or --input")
        if args.N < 0:
            raise UsageError("--N must be nonnegative")
        d = eg.degree(args.chi, args.N)
        if args.format == "json":
            out.write(dumps({"chi": args.chi, "N": args.N, "degree": d}))
        else:
            out.write(f"{d}\n")
        return EXIT_OK
    doc = _read_input(args.input)
    A = _matrix_from(doc)
    surface = _surface_from(doc)
    pt = eg.degree_for_rho(A, _float_list(doc, "rho"), surface, float(doc.get("rel_tol", 1e-9)))
    if args.format == "csv":
        out.write(csv_line(["classification", "N", "q", "chi", "degree", "note"]))
        out.write(csv_line([pt.classification.value, pt.N, pt.q, surface.chi, pt.degree, pt.note]))
    else:
        out.write(dumps({"classification": pt.classification.value, "N": pt.N, "q": pt.q,
                         "chi": surface.chi, "degree": pt.degree, "note": pt.note}))
    return EXIT_OK if pt.degree is not None else EXIT_MATH


def cmd_e_point(args, out):
    doc = _read_input(args.input)
    A = _matrix_from(doc)
    pt = eg.construct_E_point(A)
    if isinstance(pt, eg.MassVector):
        result = {"kind": "full", "support": list(range(A.n)), "sigma": pt.sigma, "m": pt.m,
                  "in_E": eg.in_E(A, pt)}
    else:
        result = {"kind": "partial", "support": list(pt.support), "sigma": pt.sigma_full,
                  "m": pt.masses.m, "in_E": False}
    out.write(dumps(result))
    return EXIT_OK


def _solution_summary(A, sol):
    result = {"status": sol.status, "alpha": sol.alpha, "stop_radius": sol.stop_radius,
              "steps": sol.steps}
    if sol.sigma_infinity is None:
        result.update(sigma_infinity=None, m_infinity=None, tail_constants=None,
                      pohozaev_residual=None, relative_residual=None, m_min=None, in_E=None,
                      sigma_at_stop=sol.sigma_running[:, -1])
        return result
    rep = rs.verify_entire_solution(A, sol)
    result.update(sigma_infinity=sol.sigma_infinity.sigma, m_infinity=sol.sigma_infinity.m,
                  tail_constants=sol.tail_constants, pohozaev_residual=rep.pohozaev_residual,
                  relative_residual=rep.relative_residual, m_min=rep.m_min,
                  in_E=rep.subset_positivity, sigma_at_stop=sol.sigma_running[:, -1])
    return result


def _write_profile(out, sol):
    n = sol.n
    out.write(csv_line(["r"] + [f"u_{i + 1}" for i in range(n)]
                       + [f"sigma_{i + 1}" for i in range(n)]))
    for k, r in enumerate(sol.r_grid):
        out.write(csv_line([float(r)] + sol.u[:, k].tolist() + sol.sigma_running[:, k].tolist()))


def cmd_radial(args, out):
    doc = _read_input(args.input)
    A = _matrix_from(doc)
    sol = rs.integrate_radial(A, _float_list(doc, "alpha"), _radial_options(doc))
    if args.format == "csv":
        _write_profile(out, sol)
    else:
        out.write(dumps(_solution_summary(A, sol)))
    return EXIT_OK


def cmd_epsilon_family(args, out):
    doc = _read_input(args.input)
    A = _matrix_from(doc)
    sol = rs.epsilon_family(A, _get(doc, "l", int), _float_list(doc, "alpha_head"),
                            float(_get(doc, "eps", (int, float))), _radial_options(doc))
    if args.format == "csv":
        _write_profile(out, sol)
    else:
        out.write(dumps(_solution_summary(A, sol)))
    return EXIT_OK


def sweep_header(n, point_len):
    return ([f"alpha_{i + 1}" for i in range(point_len)] + [f"sigma_{i + 1}" for i in range(n)]
            + [f"m_{i + 1}" for i in range(n)] + ["pohozaev_residual", "status"])


def sweep_cells(n, row):
    if row.masses is None:
        masses = [None] * (2 * n)
    else:
        masses = row.masses.sigma.tolist() + row.masses.m.tolist()
    return list(row.point) + masses + [row.pohozaev_residual, row.status]


def _grid_from(doc):
    if "grid" in doc:
        grid = _get(doc, "grid", list)
        return [np.atleast_1d(np.array(p, dtype=float)).tolist() for p in grid]
    axes = _get(doc, "axes", list)
    return [list(p) for p in itertools.product(*[[float(v) for v in ax] for ax in axes])]


def cmd_sweep(args, out):
    doc = _read_input(args.input)
    A = _matrix_from(doc)
    try:
        grid = _grid_from(doc)
    except (TypeError, ValueError):
        raise UsageError("grid points must be lists of numbers")
    lengths = {len(p) for p in grid}
    if len(lengths) > 1:
        raise UsageError("grid points must all have the same length")
    point_len = lengths.pop() if lengths else max(A.n - 1, 0)
    n = A.n
    as_csv = args.format != "json"
    if as_csv:
        out.write(csv_line(sweep_header(n, point_len)))
        on_row = lambda row: out.write(csv_line(sweep_cells(n, row)))
    else:
        on_row = None
    table = rs.sweep_initial_values(A, grid, _radial_options(doc), jobs=args.jobs, on_row=on_row)
    if as_csv:
        for i, j in table.non_injective:
            logging.getLogger(__name__).warning("grid points %d and %d map to the same masses", i, j)
    else:
        out.write(dumps({
            "columns": sweep_header(n, point_len),
            "rows": [sweep_cells(n, r) for r in table.rows],
            "errors": [r.error for r in table.rows],
            "non_injective": [list(p) for p in table.non_injective],
        }))
    return EXIT_OK


def mf_problem_from(doc):
    A = _matrix_from(doc)
    K = _get(doc, "K", int)
    specs = []
    for h in _get(doc, "h", list):
        try:
            specs.append(mf.HSpec.from_dict(h))
        except (KeyError, TypeError, ValueError, AttributeError):
            raise UsageError("each h entry needs 'const' and optional 'cos_terms' [{kx, ky, amp}]")
    if len(specs) != A.n:
        raise UsageError(f"expected {A.n} h entries, got {len(specs)}")
    return mf.MeanFieldProblem.from_specs(A, _float_list(doc, "rho"), specs, K)


def cmd_mf_solve(args, out):
    doc = _read_input(args.input)
    p = mf_problem_from(doc)
    opts = {"theta": float(doc.get("theta", 0.5)), "tol": float(doc.get("tol", 1e-8)),
            "max_iter": int(doc.get("max_iter", 5000))}
    code = EXIT_OK
    try:
        sol = mf.solve_mean_field(p, **opts)
    except MaxIterExceeded as exc:
        sol = exc.solution
        code = EXIT_MATH
    v = mf.normalize_v(p, sol.u)
    if args.format == "csv":
        out.write(f"# residual_norm={format_float(sol.residual_norm)} "
                  f"phi_value={format_float(sol.phi_value)} "
                  f"iterations={sol.iterations} converged={str(sol.converged).lower()}\n")
        n, K = p.n, p.grid.K
        out.write(csv_line(["i", "j", "x", "y"] + [f"u_{k + 1}" for k in range(n)]
                           + [f"v_{k + 1}" for k in range(n)]))
        for i in range(K):
            for j in range(K):
                out.write(csv_line([i, j, i / K, j / K] + sol.u[:, i, j].tolist()
                                   + v[:, i, j].tolist()))
    else:
        out.write(dumps({"converged": sol.converged, "residual_norm": sol.residual_norm,
                         "phi_value": sol.phi_value, "iterations": sol.iterations,
                         "rho": p.rho, "K": p.grid.K, "u": sol.u, "v": v}))
    return code


COMMANDS = {
    "check-matrix": cmd_check_matrix,
    "classify": cmd_classify,
    "degree": cmd_degree,
    "e-point": cmd_e_point,
    "radial": cmd_radial,
    "sweep": cmd_sweep,
    "epsilon-family": cmd_epsilon_family,
    "mf-solve": cmd_mf_solve,
}


def build_parser():
    parser = _Parser(prog="liouville", description="Liouville-system engines")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized drivers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-i", "--input", default=None if name == "degree" else "-",
                       help='input JSON path, "-" for stdin')
        p.add_argument("-o", "--output", default="-", help='output path, "-" for stdout')
        # degree from flags prints a bare integer unless --format json is given
        default = {"sweep": "csv", "degree": None}.get(name, "json")
        p.add_argument("--format", choices=("json", "csv"), default=default)
        if name == "degree":
            p.add_argument("--chi", type=int)
            p.add_argument("--N", type=int)
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1)
        if name == "check-matrix":
            p.add_argument("--property-trials", type=int, default=0)
            p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose from {', '.join(SUBCOMMANDS)}")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
    except UsageError as exc:
        print(f"liouville: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = None
    try:
        out = _Output(args.output)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"liouville {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LiouvilleError as exc:
        print(f"liouville {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MATH
    except OSError as exc:
        print(f"liouville {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if out is not None:
            out.close()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
