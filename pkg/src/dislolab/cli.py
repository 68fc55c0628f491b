"""Command-line front end.

Every subcommand writes its outputs, the fully resolved configuration
(``<output>.config.json``) and, where it makes sense, a JSON report. Floats
are written with 17 significant digits so reruns are byte-identical.

Exit codes: 0 success, 2 invalid input or configuration, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bbsolver import BBParams, NonContractionError, SmallnessError, calibration_family, solve_div
from .calibration import DEFAULT_PATH, CalibrationConfig, calibrate, write_constants
from .cell import prelog_limit
from .core import (BurgersLattice, ElasticTensor, load_config, tensor_from_config)
from .envelope import EnvelopeProblem, QuadraticSelfEnergy, relaxed_density
from .gammalab import gamma_trend, rigidity_probe
from .spectral import FourierField

PSI_COLUMNS = ["xi1", "xi2", "delta", "psi", "psi_over_logdelta", "psi_limit", "K_fit"]
PHI_COLUMNS = ["xi1", "xi2", "phi", "decomposition"]
GAMMA_COLUMNS = ["eps", "E_eps", "E_crit", "gap"]
RIGIDITY_COLUMNS = ["seed", "kind", "theta0", "theta", "lhs", "dist_term", "curl_mass", "rhs", "ratio"]


class ValidationError(Exception):
    pass


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_plain) + "\n")


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (tuple, Path)):
        return list(v) if isinstance(v, tuple) else str(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def write_config(output: Path, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    cfg["version"] = __version__
    write_json(output.with_name(output.name + ".config.json"), cfg)


def parallel_map(func, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, items))  # results come back in input order


def floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from exc


def require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"input file not found: {p}")
    return p


def tensor_of(args) -> ElasticTensor:
    return ElasticTensor.from_lame(args.lame_lambda, args.lame_mu)


def lattice_of(args) -> BurgersLattice:
    if args.lattice == "square":
        return BurgersLattice()
    if args.b1 is None or args.b2 is None:
        raise ValidationError("--lattice custom needs --b1 and --b2")
    return BurgersLattice(tuple(args.b1), tuple(args.b2))


# --------------------------------------------------------------------------
# subcommands


def cmd_bb_solve(args) -> int:
    params = BBParams(eps_stripe=args.eps_stripe, tol_residual=args.tol, max_iter=args.max_iter)
    if args.input:
        f = FourierField.load(require_file(args.input))
    else:
        f = calibration_family(args.grid, args.seed)
    if f.components != "scalar":
        raise ValidationError("bb-solve input must be a scalar field")
    f = f.without_mean() if args.subtract_mean else f
    sol = solve_div(f, params)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    sol.F.save(out)
    report = sol.to_dict()
    report.pop("seconds")
    write_json(Path(args.report), {"params": asdict(params), **report})
    write_config(out, args)
    if not sol.converged:
        print(f"residual {sol.residual_l2[-1]:.3g} above tolerance after {len(sol.steps)} steps",
              file=sys.stderr)
        return 3
    return 0


def _psi_rows(task):
    xi, deltas, n_theta, lam, mu = task
    res = prelog_limit(ElasticTensor.from_lame(lam, mu), xi, deltas, n_theta=n_theta)
    return [{"xi1": float(xi[0]), "xi2": float(xi[1]), "delta": d, "psi": p,
             "psi_over_logdelta": s, "psi_limit": res.psi_limit, "K_fit": res.K_fit}
            for d, p, s in res.rows] or [
        {"xi1": float(xi[0]), "xi2": float(xi[1]), "delta": d, "psi": 0.0,
         "psi_over_logdelta": 0.0, "psi_limit": 0.0, "K_fit": 0.0} for d in deltas]


def read_xi_list(path) -> list[tuple[float, float]]:
    rows = []
    with open(require_file(path)) as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if not line or line.startswith("xi1"):
                continue
            vals = floats(line)
            if len(vals) != 2:
                raise ValidationError(f"{path}: expected two numbers per line, got {line!r}")
            rows.append((vals[0], vals[1]))
    return rows


def cmd_psi_table(args) -> int:
    xis = read_xi_list(args.xi_list) if args.xi_list else [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    deltas = sorted(args.delta_schedule, reverse=True)
    if len(deltas) < 3 or not all(0 < d < 1 for d in deltas):
        raise ValidationError("delta schedule needs at least three values in (0, 1)")
    tasks = [(xi, deltas, args.n_theta, args.lame_lambda, args.lame_mu) for xi in xis]
    rows = [r for block in parallel_map(_psi_rows, tasks, args.workers) for r in block]
    out = Path(args.out)
    write_csv(out, PSI_COLUMNS, rows)
    write_config(out, args)
    return 0


def cmd_phi_table(args) -> int:
    lattice = lattice_of(args)
    psi = QuadraticSelfEnergy.from_tensor(tensor_of(args))
    prob = EnvelopeProblem(lattice, psi, np.eye(2), args.search_radius)
    xis = lattice.vectors_within(args.radius)
    rows = []
    for xi in xis:
        sol = relaxed_density(prob, xi)
        if not sol.stable:
            print(f"warning: value at {xi.tolist()} changes when the search radius grows",
                  file=sys.stderr)
        rows.append({"xi1": float(xi[0]), "xi2": float(xi[1]), "phi": sol.value,
                     "decomposition": sol.decomposition_string()})
    out = Path(args.out)
    write_csv(out, PHI_COLUMNS, rows)
    write_config(out, args)
    return 0


def cmd_gamma_run(args) -> int:
    if len(args.xi) != 2:
        raise ValidationError("--xi takes two numbers")
    if not all(0 < e < math.exp(-1) for e in args.eps_schedule):
        raise ValidationError("every eps must lie in (0, 1/e)")
    records, fit = gamma_trend(tuple(args.xi), tuple(args.eps_schedule), p=args.p,
                               tensor=tensor_of(args), n=args.grid, alpha=args.alpha)
    out = Path(args.out)
    runs = []
    for r in records:
        d = r.to_dict()
        d.pop("seconds")
        runs.append(d)
    write_json(out, {"xi": args.xi, "p": args.p, "records": runs, "fit": fit.to_dict()})
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    write_csv(csv_path, GAMMA_COLUMNS, [r.to_dict() for r in records])
    write_config(out, args)
    return 0


def cmd_rigidity_probe(args) -> int:
    rows = rigidity_probe(range(args.first_seed, args.first_seed + args.seeds), p=args.p,
                          n=args.grid, eps=args.eps)
    out = Path(args.out)
    write_csv(out, RIGIDITY_COLUMNS, rows)
    write_config(out, args)
    return 0


def cmd_calibrate(args) -> int:
    cfg = CalibrationConfig(grid=args.grid, seeds=args.seeds, primal_fields=args.primal_fields,
                            primal_grid=args.primal_grid, rigidity_grid=args.rigidity_grid,
                            p=args.p, workers=args.workers)
    constants = calibrate(cfg)
    out = write_constants(constants, args.out)
    write_config(out, args)
    return 0


# --------------------------------------------------------------------------
# parser


def _columns_help(columns: dict) -> str:
    return "output columns:\n" + "\n".join(f"  {k:<18} {v}" for k, v in columns.items())


def build_parser() -> argparse.ArgumentParser:
    fmt_cls = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="dislolab", description=__doc__.split("\n")[0],
                                     formatter_class=fmt_cls)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file; keys in the [<subcommand>] table set defaults")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker processes (default: available cores)")
    elastic = argparse.ArgumentParser(add_help=False)
    elastic.add_argument("--lame-lambda", type=float, default=0.0, help="first Lame constant (0.0)")
    elastic.add_argument("--lame-mu", type=float, default=0.5, help="shear modulus (0.5)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bb-solve", parents=[common], formatter_class=fmt_cls,
                       help="solve div F = f on the torus with sup-norm control",
                       epilog="report fields:\n  residual_l2, residual_lq  residual norms per step\n"
                              "  ratios              successive residual ratios\n"
                              "  norm_report         sup, h1, w1q norms of F and their ratios to f")
    p.add_argument("--grid", type=int, default=256, help="grid size when no input is given")
    p.add_argument("--seed", type=int, default=0, help="seed of the generated input field")
    p.add_argument("--eps-stripe", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-10, help="relative L2 residual target")
    p.add_argument("--max-iter", type=int, default=60)
    p.add_argument("--input", help="scalar field file written by FourierField.save")
    p.add_argument("--subtract-mean", action="store_true", help="remove the mean of the input")
    p.add_argument("--output", default="F.bin")
    p.add_argument("--report", default="report.json")
    p.set_defaults(func=cmd_bb_solve)

    p = sub.add_parser("psi-table", parents=[common, elastic], formatter_class=fmt_cls,
                       help="self-energies on annuli and their prelog limit",
                       epilog=_columns_help({
                           "xi1, xi2": "Burgers vector",
                           "delta": "inner radius of the annulus (outer radius 1)",
                           "psi": "minimal elastic energy on the annulus",
                           "psi_over_logdelta": "psi / |log delta|",
                           "psi_limit": "extrapolated limit of psi / |log delta|",
                           "K_fit": "fitted coefficient of 1/|log delta|"}))
    p.add_argument("--xi-list", help="file with one 'xi1 xi2' pair per line (default: e1, e2, e1+e2)")
    p.add_argument("--delta-schedule", type=floats, default=[1e-2, 1e-3, 1e-4, 1e-5])
    p.add_argument("--n-theta", type=int, default=128, help="angular grid points")
    p.add_argument("--out", default="psi.csv")
    p.set_defaults(func=cmd_psi_table)

    p = sub.add_parser("phi-table", parents=[common, elastic], formatter_class=fmt_cls,
                       help="relaxed self-energy density on lattice vectors",
                       epilog=_columns_help({
                           "xi1, xi2": "lattice vector",
                           "phi": "relaxed density at rotation Id",
                           "decomposition": "optimal splitting as 'lambda:v1:v2' terms joined by ';'"}))
    p.add_argument("--lattice", choices=["square", "custom"], default="square")
    p.add_argument("--b1", type=floats, help="first basis vector for a custom lattice")
    p.add_argument("--b2", type=floats, help="second basis vector for a custom lattice")
    p.add_argument("--radius", type=float, default=2.0, help="tabulate lattice vectors up to this norm")
    p.add_argument("--search-radius", type=float, default=3.0, help="column set of the linear program")
    p.add_argument("--out", default="phi.csv")
    p.set_defaults(func=cmd_phi_table)

    p = sub.add_parser("gamma-run", parents=[common, elastic], formatter_class=fmt_cls,
                       help="recovery energies against the limit energy",
                       epilog=_columns_help({
                           "eps": "core scale",
                           "E_eps": "rescaled mixed-growth energy of the recovery pair",
                           "E_crit": "limit energy of the constant density xi dx",
                           "gap": "|E_eps - E_crit| / E_crit"}))
    p.add_argument("--xi", type=floats, default=[1.0, 0.0])
    p.add_argument("--eps-schedule", type=floats, default=[1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    p.add_argument("--p", type=float, default=1.5, help="growth exponent in (1, 2)")
    p.add_argument("--grid", type=int, default=256, help="cells per side of the strain grid")
    p.add_argument("--alpha", type=float, default=0.5, help="split radius eps^alpha")
    p.add_argument("--out", default="run.json")
    p.add_argument("--csv", help="trend table (default: run file with .csv suffix)")
    p.set_defaults(func=cmd_gamma_run)

    p = sub.add_parser("rigidity-probe", parents=[common], formatter_class=fmt_cls,
                       help="optimal-rotation estimate on seeded fields",
                       epilog=_columns_help({
                           "seed": "field seed (even: perturbed rotation, odd: one dislocation)",
                           "kind": "field family",
                           "theta0": "rotation angle used to build the field",
                           "theta": "optimal rotation angle found",
                           "lhs": "mixed-growth distance to the optimal rotation",
                           "dist_term": "mixed-growth distance to the rotation group",
                           "curl_mass": "total variation of the curl",
                           "rhs": "dist_term + curl_mass^2",
                           "ratio": "lhs / rhs"}))
    p.add_argument("--seeds", type=int, default=20, help="number of seeds")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--p", type=float, default=1.5)
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--eps", type=float, default=1e-2, help="Burgers scale of the dislocation fields")
    p.add_argument("--out", default="rigidity.csv")
    p.set_defaults(func=cmd_rigidity_probe)

    p = sub.add_parser("calibrate", parents=[common], formatter_class=fmt_cls,
                       help="measure solver and rigidity constants",
                       epilog="constants:\n  eps_s      stripe parameter\n"
                              "  c_small    smallest working L2 norm of one step\n"
                              "  delta_eff  largest defect ratio of one step\n"
                              "  C_delta    largest quadratic defect coefficient\n"
                              "  C_linf     largest sup(F)/L2(f) of the divergence solver\n"
                              "  C_primal   largest sup(g)/H1(phi) of the decomposition\n"
                              "  C_emp      largest rigidity ratio lhs/rhs")
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--primal-fields", type=int, default=10)
    p.add_argument("--primal-grid", type=int, default=128)
    p.add_argument("--rigidity-grid", type=int, default=128)
    p.add_argument("--p", type=float, default=1.5)
    p.add_argument("--out", default=str(DEFAULT_PATH))
    p.set_defaults(func=cmd_calibrate)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = load_config(require_file(args.config))
    section = cfg.get(args.command, {})
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(k.replace("-", "_") for k in section) - known
    if unknown:
        raise ValidationError(f"unknown keys in [{args.command}]: {sorted(unknown)}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in section.items()})
    if "elastic" in cfg:
        t = tensor_from_config(cfg)
        lam, mu = t.lame()
        sub.set_defaults(lame_lambda=lam, lame_mu=mu)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SmallnessError, NonContractionError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
