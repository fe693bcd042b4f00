"""Command-line entry point: ``capnet <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid input.
Errors are reported as one JSON object on stderr.  Every run merges an entry
into ``<out>/manifest.json`` listing its configuration, seed and outputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import CalibrationError, axis, calibrate_network, q_from_density
from .distfit import FAMILIES, FitError, ks_statistic, rank_families
from .ingest import TradeDataError, aggregate, parse_trade_csv, write_table_csv
from .metrics import COUNTRY, PRODUCT, degree_profile, density, diagram, diagram_slope, proximity
from .model import (
    BinomialParams,
    ModelError,
    diversification_density,
    expected_diversification,
    expected_k_c1,
    expected_ubiquity,
    leontief,
    quiescence_curve,
    sample_world,
    ubiquity_density,
)
from .nullmodels import EnsembleSpec, ensemble_diagram
from .rca import (
    NetworkError,
    compute_rca,
    read_network_csv,
    threshold,
    triangular_order,
    write_dense_csv,
    write_edge_list,
    write_network_csv,
    write_rca_csv,
)
from .report import MissingArtifactError, build_report, render_text
from .synthetic import planted_trade_table

OUT_ENV = "CAPNET_OUT"
EXIT_RUNTIME, EXIT_USAGE, EXIT_INVALID = 1, 2, 3


class UsageError(Exception):
    pass


class OutputExistsError(ValueError):
    pass


VALIDATION_ERRORS = (
    TradeDataError, NetworkError, FitError, ModelError, CalibrationError,
    OutputExistsError, MissingArtifactError, FileNotFoundError, ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class Outputs:
    """Owns the output directory of one run: refuses to clobber, records what it wrote."""

    def __init__(self, root, force: bool):
        self.root = Path(root)
        self.force = force
        self.written: list[Path] = []

    def claim(self, *names) -> list[Path]:
        paths = [self.root / n for n in names]
        if not self.force:
            clash = [str(p) for p in paths if p.exists()]
            if clash:
                raise OutputExistsError(f"refusing to overwrite {', '.join(clash)} (use --force)")
        self.root.mkdir(parents=True, exist_ok=True)
        self.written.extend(paths)
        return paths

    def write_json(self, path: Path, obj) -> None:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")

    def manifest(self, command: str, config: dict, inputs: list) -> None:
        path = self.root / "manifest.json"
        data = json.loads(path.read_text()) if path.is_file() else {"runs": {}}
        data["version"] = __version__
        data["runs"][command] = {
            "config": config,
            "seed": config.get("seed"),
            "inputs": [str(p) for p in inputs],
            "outputs": {p.name: _sha256(p) for p in self.written if p.is_file()},
        }
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _f(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _params(args, n_c=None, n_p=None) -> BinomialParams:
    n_c = args.countries if n_c is None else n_c
    n_p = args.products if n_p is None else n_p
    if (args.q is None) == (args.eta is None):
        raise ValueError("give exactly one of --q or --eta")
    q = args.q if args.q is not None else q_from_density(args.eta, args.r, args.na)
    return BinomialParams(args.r, q, args.na, n_c, n_p)


def _load_table(args):
    return aggregate(parse_trade_csv(args.input, args.year))


# -- subcommands ------------------------------------------------------------

def cmd_ingest(args, out: Outputs):
    if args.synthetic:
        trade, planted_json, planted_csv = out.claim("trade.csv", "planted.json", "planted_matrix.csv")
        params = _params(args)
        planted = planted_trade_table(params, args.seed, r_star=args.threshold)
        write_table_csv(planted.table, trade)
        write_dense_csv(planted_csv, planted.table.countries, planted.table.products,
                        planted.target.astype(int), fmt=str)
        out.write_json(planted_json, {
            "params": params.to_dict(), "seed": args.seed, "threshold": args.threshold,
            "mismatches": planted.mismatches, "iterations": planted.iterations,
            "dropped_countries": planted.dropped_countries, "dropped_products": planted.dropped_products,
        })
        return []
    if not args.input:
        raise ValueError("ingest needs --input or --synthetic")
    (trade,) = out.claim("trade.csv")
    write_table_csv(_load_table(args), trade)
    return [args.input]


def cmd_rca(args, out: Outputs):
    rca_csv, rep = out.claim("rca.csv", "rca_report.json")
    rca = compute_rca(_load_table(args))
    write_rca_csv(rca, rca_csv)
    out.write_json(rep, {
        "source_total": rca.source_total,
        "countries": len(rca.countries),
        "products": len(rca.products),
        "dropped_countries": list(rca.dropped_countries),
        "dropped_products": list(rca.dropped_products),
    })
    return [args.input]


def cmd_matrix(args, out: Outputs):
    names = ["matrix.csv"] + (["edges.csv"] if args.edges else []) + (["rca_log10.csv"] if args.log10_rca else [])
    paths = dict(zip(names, out.claim(*names)))
    rca = compute_rca(_load_table(args))
    net = threshold(rca, args.threshold)
    order = triangular_order(net) if args.order else None
    if order is not None:
        net = net.permuted(*order)
    write_network_csv(net, paths["matrix.csv"])
    if args.edges:
        write_edge_list(net, paths["edges.csv"])
    if args.log10_rca:
        write_rca_csv(rca, paths["rca_log10.csv"], log10=True, order=order)
    return [args.input]


def cmd_metrics(args, out: Outputs):
    dc, dp, px, dj = out.claim("degrees_countries.csv", "degrees_products.csv", "proximity.csv", "density.json")
    net = read_network_csv(args.matrix, args.threshold)
    prof = degree_profile(net)

    def deg_rows(labels, k0, k1):
        return [(lab, int(a), _f(b) if np.isfinite(b) else "") for lab, a, b in zip(labels, k0, k1)]

    _write_rows(dc, ["label", "k0", "k1"], deg_rows(net.countries, prof.k_c0, prof.k_c1))
    _write_rows(dp, ["label", "k0", "k1"], deg_rows(net.products, prof.k_p0, prof.k_p1))
    prox = proximity(net)
    iu = np.triu_indices(len(net.products), k=1)
    with px.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "p'", "phi"])
        prods = net.products
        for i, j, v in zip(iu[0].tolist(), iu[1].tolist(), prox.phi[iu].tolist()):
            w.writerow([prods[i], prods[j], repr(v)])
    n_c, n_p = net.shape
    out.write_json(dj, {
        "density": density(net), "edges": net.n_edges, "n_c": n_c, "n_p": n_p,
        "threshold": net.threshold, "undefined_proximity_pairs": int(prox.undefined[iu].sum()),
    })
    return [args.matrix]


def cmd_nullmodel(args, out: Outputs):
    tag = f"nullmodel_{args.model}"
    summary_csv, slopes_json = out.claim(f"{tag}.csv", f"{tag}_slopes.json")
    net = read_network_csv(args.matrix)
    spec = EnsembleSpec(args.model, args.replicates, args.seed, args.swap_factor)
    summary = ensemble_diagram(net, spec, bin_width=args.bin_width)
    _write_rows(summary_csv, ["k0_bin", "mean_k1", "std_k1", "side"],
                [(_f(b.k0_bin), _f(b.mean_k1), _f(b.std_k1), b.side) for b in summary.bins])
    out.write_json(slopes_json, {
        "model": args.model,
        "replicates": args.replicates,
        "seed": args.seed,
        "swap_factor": args.swap_factor,
        "empirical_slope": {s: diagram_slope(diagram(net, s)) for s in (COUNTRY, PRODUCT)},
        "country_band": list(summary.slope_band(COUNTRY)),
        "product_band": list(summary.slope_band(PRODUCT)),
        "slopes": summary.slopes,
    })
    return [args.matrix]


def _read_values(path, column):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"values file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FitError(f"{path}: empty file")
        col = len(header) - 1 if column is None else header.index(column) if column in header else None
        if col is None:
            raise FitError(f"{path}: no column {column!r}")
        vals = []
        for lineno, row in enumerate(reader, start=2):
            if not row or row[col] == "":
                continue
            try:
                vals.append(float(row[col]))
            except ValueError:
                raise FitError(f"{path}:{lineno}: non-numeric value {row[col]!r}") from None
    return np.array(vals)


def cmd_fitdist(args, out: Outputs):
    (res,) = out.claim(args.name)
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    bad = [f for f in families if f not in FAMILIES]
    if bad:
        raise ValueError(f"unknown families {bad}; choose from {list(FAMILIES)}")
    values = _read_values(args.input, args.column)
    ranking = rank_families(values, families)
    d = ranking.to_dict()
    if args.weighted_ks:
        for f in ranking.fits:
            d["fits"][f.family]["weighted_ks"] = ks_statistic(values[values > 0], f.cdf, weighted=True)
    d["column"] = args.column
    out.write_json(res, d)
    return [args.input]


def _analytic_curves(params: BinomialParams, points: int) -> dict:
    k = np.linspace(0, params.n_a, points)
    curves = {
        "diversification": (k, expected_diversification(params, k)),
        "ubiquity": (k, expected_ubiquity(params, k)),
    }
    lo = params.n_p * (1 - params.q) ** params.n_a
    k0 = np.linspace(lo, params.n_p, points + 1)[1:]
    curves["kc1"] = (k0, expected_k_c1(params, k0))
    for name, dens in (("diversification_pdf", diversification_density(params)),
                       ("ubiquity_pdf", ubiquity_density(params))):
        x = np.linspace(dens.grid[0], dens.grid[-1], points)
        curves[name] = (x, dens.pdf(x))
    return curves


def cmd_model(args, out: Outputs):
    params = _params(args)
    if args.mode == "simulate":
        wc, wp, mx = out.claim("world_C.csv", "world_P.csv", "matrix.csv")
        world = sample_world(params, args.seed)
        caps = [f"a{i}" for i in range(params.n_a)]
        net = leontief(world)
        write_dense_csv(wc, net.countries, caps, world.C.astype(int), fmt=str)
        write_dense_csv(wp, net.products, caps, world.P.astype(int), fmt=str, corner="product")
        write_network_csv(net, mx)
        return []
    curves = _analytic_curves(params, args.points)
    names = list(curves) if args.curve == "all" else [args.curve]
    paths = out.claim(*[f"analytic_{n}.csv" for n in names])
    for n, p in zip(names, paths):
        x, y = curves[n]
        _write_rows(p, ["x", "y"], [(_f(a), _f(b)) for a, b in zip(x, y)])
    return []


def cmd_calibrate(args, out: Outputs):
    grid_csv, res_json, het_csv = out.claim("calibration_grid.csv", "calibration.json", "heterogeneous.csv")
    net = read_network_csv(args.matrix)
    r_values = axis(args.r_min, args.r_max, args.r_step)
    na_values = axis(args.na_min, args.na_max, args.na_step, integer=True)
    grid, result, report = calibrate_network(
        net, r_values, na_values, seeds_per_cell=args.seeds_per_cell, seed=args.seed,
        r2_quantile=args.r2_quantile, ks_quantile=args.ks_quantile, weighted=args.weighted_ks,
        workers=args.workers, replicates=args.replicates, density_rule=args.density_rule,
    )
    _write_rows(grid_csv, ["r", "na", "q", "r2", "ks", "feasible"],
                [(_f(r), na, _f(q), _f(r2), _f(ks), int(ok)) for r, na, q, r2, ks, ok in grid.rows()])
    d = result.to_dict()
    d["seed"] = args.seed
    out.write_json(res_json, d)
    rows = [] if report is None else [(b, _f(t), _f(h), _f(g)) for b, t, h, g in report.rows()]
    _write_rows(het_csv, ["k_c0", "target", "heterogeneous", "homogeneous"], rows)
    return [args.matrix]


def cmd_quiescence(args, out: Outputs):
    (path,) = out.claim("quiescence.csv")
    rows = []
    for n_a in args.na:
        p = BinomialParams(0.5, args.q, n_a, 1, 1)
        for x, y in quiescence_curve(p, points=args.points):
            rows.append((n_a, _f(args.q), _f(x), _f(y)))
    _write_rows(path, ["na", "q", "x", "y"], rows)
    return []


def cmd_report(args, out: Outputs):
    run = Path(args.run) if args.run else out.root
    rep = build_report(run)
    js, txt = out.claim("report.json", "report.txt")
    out.write_json(js, rep)
    txt.write_text(render_text(rep), encoding="utf-8")
    return [str(run)]


# -- parser -----------------------------------------------------------------

def _add_world_args(p, need_dims=True):
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--q", type=float)
    p.add_argument("--eta", type=float, help="network density; q is derived from it")
    p.add_argument("--na", type=int, required=True)
    if need_dims:
        p.add_argument("--countries", type=int, default=100)
        p.add_argument("--products", type=int, default=500)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default=os.environ.get(OUT_ENV, "out"),
                        help=f"output directory (default ${OUT_ENV} or ./out)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON object of option defaults; explicit flags win")

    parser = _Parser(prog="capnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="parse and aggregate a trade CSV")
    p.add_argument("--input")
    p.add_argument("--year", type=int)
    p.add_argument("--synthetic", action="store_true", help="generate a planted-model trade table")
    p.add_argument("--r", type=float, default=0.9)
    p.add_argument("--q", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--na", type=int, default=50)
    p.add_argument("--countries", type=int, default=100)
    p.add_argument("--products", type=int, default=500)
    p.add_argument("--threshold", type=float, default=1.0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rca", parents=[common], help="revealed comparative advantage matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--year", type=int)
    p.set_defaults(func=cmd_rca)

    p = sub.add_parser("matrix", parents=[common], help="threshold RCA into the 0/1 network")
    p.add_argument("--input", required=True)
    p.add_argument("--year", type=int)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--edges", action="store_true", help="also write an edge list")
    p.add_argument("--order", action="store_true", help="sort rows/columns into the triangular layout")
    p.add_argument("--log10-rca", action="store_true", help="also write log10 RCA values")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("metrics", parents=[common], help="degrees, proximity and density")
    p.add_argument("--matrix", required=True)
    p.add_argument("--threshold", type=float, default=1.0, help="threshold recorded with the network")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("nullmodel", parents=[common], help="randomized ensemble diagram")
    p.add_argument("--matrix", required=True)
    p.add_argument("--model", type=int, choices=[1, 2, 3, 4], required=True)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--swap-factor", type=int, default=100)
    p.add_argument("--bin-width", type=float, default=1.0)
    p.set_defaults(func=cmd_nullmodel)

    p = sub.add_parser("fitdist", parents=[common], help="maximum-likelihood family ranking")
    p.add_argument("--input", required=True)
    p.add_argument("--column", help="column to fit (default: last)")
    p.add_argument("--families", default=",".join(FAMILIES))
    p.add_argument("--weighted-ks", action="store_true")
    p.add_argument("--name", default="fitdist.json", help="output file name")
    p.set_defaults(func=cmd_fitdist)

    p = sub.add_parser("model", parents=[common], help="simulate a world or tabulate analytic curves")
    p.add_argument("mode", choices=["simulate", "analytic"])
    _add_world_args(p)
    p.add_argument("--curve", default="all",
                   choices=["all", "diversification", "ubiquity", "kc1", "diversification_pdf", "ubiquity_pdf"])
    p.add_argument("--points", type=int, default=101)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("calibrate", parents=[common], help="grid calibration against a network")
    p.add_argument("--matrix", required=True)
    p.add_argument("--r-min", type=float, default=0.50)
    p.add_argument("--r-max", type=float, default=0.98)
    p.add_argument("--r-step", type=float, default=0.02)
    p.add_argument("--na-min", type=int, default=10)
    p.add_argument("--na-max", type=int, default=200)
    p.add_argument("--na-step", type=int, default=5)
    p.add_argument("--seeds-per-cell", type=int, default=5)
    p.add_argument("--r2-quantile", type=float, default=0.1)
    p.add_argument("--ks-quantile", type=float, default=0.1)
    p.add_argument("--weighted-ks", action="store_true")
    p.add_argument("--replicates", type=int, default=1000, help="heterogeneous refit simulations (0 skips)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--density-rule", choices=["mean_field", "exact"], default="mean_field",
                   help="how each cell's q is derived from the observed density")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("quiescence", parents=[common], help="product fraction vs capability fraction")
    p.add_argument("--q", type=float, default=0.2)
    p.add_argument("--na", type=int, nargs="+", default=[10, 100, 1000])
    p.add_argument("--points", type=int, default=101)
    p.set_defaults(func=cmd_quiescence)

    p = sub.add_parser("report", parents=[common], help="summarize a run directory")
    p.add_argument("--run", help="directory holding earlier outputs (default: --out)")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def _config_tokens(path: str) -> list[str]:
    """Flag tokens for a JSON config; keys are option names with or without dashes."""
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    tokens = []
    for key, value in cfg.items():
        flag = "--" + key.lstrip("-").replace("_", "-")
        if value is True:
            tokens.append(flag)
        elif value is False or value is None:
            continue
        elif isinstance(value, list):
            tokens += [flag, *map(str, value)]
        else:
            tokens += [flag, str(value)]
    return tokens


def _with_config(argv: list[str]) -> list[str]:
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv
    # config flags go right after the subcommand words so later explicit flags override them
    head = 0
    while head < len(argv) and not argv[head].startswith("-"):
        head += 1
    return argv[:head] + _config_tokens(path) + argv[head:]


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_with_config(argv))
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    out = Outputs(args.out, args.force)
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "force", "config")}
    try:
        inputs = args.func(args, out)
        out.manifest(args.command, config, inputs)
    except VALIDATION_ERRORS as exc:
        return _fail(EXIT_INVALID, exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_RUNTIME, exc)
    return 0


def main() -> None:
    sys.exit(run())
