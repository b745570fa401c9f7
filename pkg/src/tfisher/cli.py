"""Command-line interface.

Every command prints one JSON document (default) or a TSV table. JSON
floats carry 17 significant digits and the document echoes the effective
configuration and the package version. Exit codes: 0 success, 2 usage or
input error, 3 numeric or model failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .altdist import SignalModel, alt_distribution, power
from .assoc import run_association, write_gene_table, write_qq
from .efficiency import (EfficiencyConfig, GridSpec, boundary_a, boundary_b, mu_lower_bound,
                         mu_prime_lower_bound, optimize)
from .errors import (BracketError, ConvergenceError, DomainError, FitError, InfeasibleLevelError,
                     ModelError, ParseError, TFisherError)
from .montecarlo import ARTP, ATPM, RTP, SimulationPlan, default_workers, simulate_power
from .nulldist import critical_value, null_pvalue
from .omnibus import DEFAULT_GRID, TauGrid, omnibus_pvalue_at, omnibus_statistic
from .statistic import TFisherParams, as_pvalues, statistic

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _json(obj, indent=0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{_json(str(k))}: {_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [inner + _json(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return f"{x:.17g}" if math.isfinite(x) else "null"
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_json(obj) -> str:
    """JSON text with every float printed to 17 significant digits."""
    return _json(obj) + "\n"


def _tsv(rows) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = ["\t".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            if isinstance(v, (float, np.floating)):
                cells.append(f"{float(v):.6g}")
            else:
                cells.append(str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# input helpers
# ---------------------------------------------------------------------------


def read_pvalues(path) -> np.ndarray:
    """One p-value per line; blank lines and ``#`` comments are skipped."""
    path = Path(path)
    try:
        fh = open(path)
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path) from None
    values = []
    with fh:
        for number, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise ParseError(f"not a number: {text!r}", path, number) from None
            if not (0.0 < v <= 1.0):
                raise ParseError(f"p-value {text} outside (0, 1]", path, number)
            values.append(v)
    if not values:
        raise ParseError("no p-values found", path)
    return as_pvalues(values)


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _grid_from(args) -> TauGrid:
    if args.tau1_list is None and args.tau2_list is None:
        taus = args.grid if args.grid is not None else [p.tau1 for p in DEFAULT_GRID]
        return TauGrid.soft(taus)
    if args.tau1_list is None or args.tau2_list is None or len(args.tau1_list) != len(args.tau2_list):
        raise DomainError("--tau1-list and --tau2-list must be given together with equal lengths")
    return TauGrid(tuple(TFisherParams(a, b) for a, b in zip(args.tau1_list, args.tau2_list)))


def _grid_echo(grid):
    return [[p.tau1, p.tau2] for p in grid]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_stat(args):
    p = read_pvalues(args.pvals)
    params = TFisherParams(args.tau1, args.tau2)
    config = {"pvals": str(args.pvals), "n": int(p.size), "tau1": params.tau1, "tau2": params.tau2}
    return config, {"statistic": statistic(p, params)}


def cmd_pvalue(args):
    p = read_pvalues(args.pvals)
    params = TFisherParams(args.tau1, args.tau2)
    config = {"pvals": str(args.pvals), "n": int(p.size), "tau1": params.tau1, "tau2": params.tau2}
    return config, {"statistic": statistic(p, params), "p_value": null_pvalue(p, params)}


def cmd_opvalue(args):
    p = read_pvalues(args.pvals)
    grid = _grid_from(args)
    w_o, j = omnibus_statistic(p, grid)
    res = omnibus_pvalue_at(w_o, p.size, grid, seed=args.seed, method=args.method)
    config = {"pvals": str(args.pvals), "n": int(p.size), "grid": _grid_echo(grid),
              "method": args.method, "seed": args.seed}
    return config, {"w_o": w_o, "argmin": j, "argmin_tau1": grid[j].tau1,
                    "argmin_tau2": grid[j].tau2, "p_value": res.value, "mvn_std_error": res.error}


def cmd_power(args):
    params = TFisherParams(args.tau1, args.tau2)
    model = SignalModel(args.eps, args.mu, args.n, args.two_sided)
    fit = alt_distribution(model, params)
    config = {"n": args.n, "eps": args.eps, "mu": args.mu, "tau1": params.tau1,
              "tau2": params.tau2, "alpha": args.alpha, "two_sided": args.two_sided}
    return config, {"critical_value": critical_value(args.alpha, args.n, params),
                    "power": power(model, params, args.alpha),
                    "sn_xi": fit.xi, "sn_omega": fit.omega, "sn_alpha": fit.alpha,
                    "normal_fallback": fit.fallback}


def cmd_optimize(args):
    model = SignalModel(args.eps, args.mu)
    cfg = EfficiencyConfig(args.n, args.alpha)
    grid = GridSpec(args.step, args.step2 or args.step, 1.0, args.tau2_max)
    surf = optimize(args.kind, model, cfg, grid, refine=not args.no_refine)
    if args.surface_csv:
        surf.to_csv(args.surface_csv)
    config = {"kind": args.kind, "eps": args.eps, "mu": args.mu, "n": args.n, "alpha": args.alpha,
              "tau1_step": grid.tau1_step, "tau2_step": grid.tau2_step,
              "tau2_max": grid.tau2_max, "refine": not args.no_refine,
              "surface_csv": args.surface_csv}
    return config, {"tau1": surf.maximizer[0], "tau2": surf.maximizer[1], "value": surf.max_value,
                    "refined_tau1": surf.refined[0], "refined_tau2": surf.refined[1],
                    "refined_value": surf.refined_value}


def cmd_boundary(args):
    mus = args.mu if args.mu else list(np.linspace(1.0, 3.0, 21))
    lower = mu_lower_bound()
    rows = []
    for mu in mus:
        row = {"mu": float(mu), "h_b": boundary_b(mu) if mu > lower else float("nan")}
        for n in args.n:
            try:
                row[f"h_a_n{n}"] = boundary_a(mu, EfficiencyConfig(n, args.alpha))
            except DomainError:
                row[f"h_a_n{n}"] = float("nan")
        rows.append(row)
    config = {"mu": [float(m) for m in mus], "n": args.n, "alpha": args.alpha}
    result = {"mu_lower_bound": lower,
              "mu_prime_lower_bound": {str(n): mu_prime_lower_bound(EfficiencyConfig(n, args.alpha))
                                       for n in args.n},
              "rows": rows}
    return config, result


def _method_from(args, n):
    kind = args.method
    if kind == "tfisher":
        return TFisherParams(args.tau1, args.tau2)
    if kind == "otfisher":
        return _grid_from(args)
    if kind == "rtp":
        return RTP(args.k)
    if kind == "artp":
        return ARTP(tuple(args.ranks), args.inner) if args.ranks else ARTP.default(n, args.inner)
    if kind == "atpm":
        return ATPM(tuple(args.grid)) if args.grid else ATPM()
    raise DomainError(f"unknown method {kind!r}")


def cmd_simulate(args):
    model = SignalModel(args.eps, args.mu, args.n, args.two_sided)
    method = _method_from(args, args.n)
    plan = SimulationPlan(model, method, args.replicates, args.seed, args.reference, args.workers)
    est = simulate_power(plan, args.alpha)
    config = {"method": est.method, "params": est.params, "n": args.n, "eps": args.eps,
              "mu": args.mu, "alpha": args.alpha, "replicates": args.replicates,
              "reference": args.reference, "seed": args.seed, "two_sided": args.two_sided}
    return config, {"power": est.power, "se": est.se}


def cmd_assoc(args):
    if args.grid is not None or args.tau1_list is not None:
        method = _grid_from(args)
        method_echo = {"grid": _grid_echo(method)}
    else:
        method = TFisherParams(args.tau1, args.tau2)
        method_echo = {"tau1": method.tau1, "tau2": method.tau2}
    out = run_association(args.phenotype, args.genotype, method, args.covariates,
                          two_sided=not args.one_sided, workers=args.workers or default_workers(),
                          seed=args.seed)
    if args.out:
        with open(args.out, "w") as fh:
            write_gene_table(out.genes, fh)
    if args.qq:
        with open(args.qq, "w") as fh:
            write_qq([g.p_value for g in out.genes], fh)
    config = {"phenotype": str(args.phenotype), "covariates": args.covariates and str(args.covariates),
              "genotype": [str(g) for g in args.genotype], "two_sided": not args.one_sided,
              "seed": args.seed, **method_echo}
    genes = [{"gene": g.gene, "n_snv": g.n_snv, "statistic": g.statistic, "p_value": g.p_value}
             for g in out.genes]
    return config, {"genes": genes, "dropped_monomorphic": out.dropped}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_params(p, required=True):
    p.add_argument("--tau1", type=float, required=required, default=None if required else 0.05)
    p.add_argument("--tau2", type=float, required=required, default=None if required else 0.05)


def _add_grid(p):
    p.add_argument("--grid", type=_floats, help="soft-thresholding grid, e.g. 0.01,0.05,0.5,1")
    p.add_argument("--tau1-list", type=_floats)
    p.add_argument("--tau2-list", type=_floats)


def _add_format(p):
    p.add_argument("--format", choices=("json", "tsv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfisher", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stat", help="TFisher statistic of a p-value file")
    p.add_argument("--pvals", required=True)
    _add_params(p)
    _add_format(p)

    p = sub.add_parser("pvalue", help="exact TFisher p-value")
    p.add_argument("--pvals", required=True)
    _add_params(p)
    _add_format(p)

    p = sub.add_parser("opvalue", help="omnibus (oTFisher) p-value")
    p.add_argument("--pvals", required=True)
    _add_grid(p)
    p.add_argument("--method", choices=("mvn", "copula"), default="mvn")
    p.add_argument("--seed", type=int, default=0)
    _add_format(p)

    p = sub.add_parser("power", help="analytical power under the Gaussian mixture")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    _add_params(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--two-sided", action="store_true")
    _add_format(p)

    p = sub.add_parser("optimize", help="grid search for the most efficient (tau1, tau2)")
    p.add_argument("--kind", choices=("BE", "APR", "APE"), required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--step", type=float, default=0.01, help="tau1 grid step (default 0.01)")
    p.add_argument("--step2", type=float, default=None, help="tau2 grid step (default: --step)")
    p.add_argument("--tau2-max", type=float, default=10.0)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--surface-csv", default=None)
    _add_format(p)

    p = sub.add_parser("boundary", help="h_b and h_a boundary curves")
    p.add_argument("--mu", type=_floats, default=None)
    p.add_argument("--n", type=_ints, default=[50, 5000])
    p.add_argument("--alpha", type=float, default=0.05)
    _add_format(p)

    p = sub.add_parser("simulate", help="Monte-Carlo power or level")
    p.add_argument("--method", choices=("tfisher", "otfisher", "rtp", "artp", "atpm"),
                   default="tfisher")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--mu", type=float, default=0.0)
    _add_params(p, required=False)
    _add_grid(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--ranks", type=_ints, default=None)
    p.add_argument("--inner", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--reference", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--two-sided", action="store_true")
    _add_format(p)

    p = sub.add_parser("assoc", help="gene-level association tests")
    p.add_argument("--phenotype", required=True)
    p.add_argument("--covariates", default=None)
    p.add_argument("--genotype", nargs="+", required=True)
    _add_params(p, required=False)
    _add_grid(p)
    p.add_argument("--one-sided", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="gene table (TSV)")
    p.add_argument("--qq", default=None, help="sorted p-values for a Q-Q plot (TSV)")
    _add_format(p)
    return parser


_COMMANDS = {"stat": cmd_stat, "pvalue": cmd_pvalue, "opvalue": cmd_opvalue, "power": cmd_power,
             "optimize": cmd_optimize, "boundary": cmd_boundary, "simulate": cmd_simulate,
             "assoc": cmd_assoc}


def _rows_for_tsv(command, result):
    if command == "boundary":
        return result["rows"]
    if command == "assoc":
        return result["genes"]
    return [{k: v for k, v in result.items() if not isinstance(v, (dict, list))}]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config, result = _COMMANDS[args.command](args)
    except (ParseError, DomainError) as exc:
        print(f"tfisher {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleLevelError as exc:
        print(f"tfisher {args.command}: infeasible level: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConvergenceError, ModelError, FitError, BracketError, TFisherError,
            ArithmeticError) as exc:
        print(f"tfisher {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.format == "tsv":
        sys.stdout.write(_tsv(_rows_for_tsv(args.command, result)))
    else:
        sys.stdout.write(to_json({"command": args.command, "version": __version__,
                                  "config": config, "result": result}))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
