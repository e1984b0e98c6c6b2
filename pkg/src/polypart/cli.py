"""Command-line front end: single solves, parameter sweeps, bound-contraction
reports, and envelope sampling for external plotting.

Outputs one JSON report per run plus an aggregate CSV whose columns are
``instance,mode,best,bc_percent,gap_percent,t_tighten_s,t_loop_s``.  The
``POLYPART_TIME_LIMIT`` environment variable overrides ``--time-limit``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import driver, parser as mlt
from .driver import SolveReport, SolverConfig
from .model import Incumbent, Model, ModelError, normalize
from .relaxation import PartitionMap, bilinear_region, lemma1_regions
from .tighten import TightenConfig, tighten_bounds

CSV_HEADER = "instance,mode,best,bc_percent,gap_percent,t_tighten_s,t_loop_s"
TIGHTEN_CSV_HEADER = "variable,original_lower,original_upper,lower,upper,selectors"
ENVELOPE_2D_HEADER = "x_i,x_j,z_min,z_max"
ENVELOPE_1D_HEADER = "x,z_min,z_max"


def _fmt_gap(report: SolveReport) -> str:
    if report.status == driver.STATUS_GLOBAL:
        return "GOpt"
    if report.gap_percent is None:
        return "n/a"
    return f"{report.gap_percent:.6g}"


def csv_row(report: SolveReport, best: object) -> str:
    bc = "inf" if report.bc_is_infinite else f"{report.bc_percent:.2f}"
    return ",".join([
        report.instance,
        report.mode,
        str(best),
        bc,
        _fmt_gap(report),
        f"{report.times['tighten_s']:.2f}",
        f"{report.times['loop_s']:.2f}",
    ])


def _parse_incumbent(spec: str, model: Model) -> Incumbent:
    values = {}
    for item in spec.split(","):
        name, _, val = item.partition("=")
        if not val:
            raise ModelError(f"bad incumbent entry {item!r}; expected name=value")
        var = model.var_by_name(name.strip())
        values[var.index] = float(val)
    missing = [model.variables[i].name for i in model.original_indices()
               if i not in values]
    if missing:
        raise ModelError(f"incumbent is missing values for {missing}")
    point = model.complete_point(values)
    obj = model.eval_expr(model.objective, point)
    return Incumbent(point=point, objective_value=float(obj)).validated(model)


def _load(path: str) -> Model:
    text = Path(path).read_text(encoding="utf-8")
    return normalize(mlt.parse(text))


def _collect_instances(paths: list) -> list:
    out = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            out.extend(sorted(path.glob("*.mlt")))
        else:
            if not path.exists():
                raise FileNotFoundError(f"no such instance: {p}")
            out.append(path)
    if not out:
        raise FileNotFoundError("no .mlt instances found")
    return out


def _config_from_args(args, mode=None, delta=None, utmc_n=None) -> SolverConfig:
    time_limit = float(os.environ.get("POLYPART_TIME_LIMIT", args.time_limit))
    return SolverConfig(
        mode=mode or args.mode,
        delta=delta if delta is not None else args.delta,
        utmc_n=utmc_n if utmc_n is not None else args.utmc_n,
        tol_imp=args.tol_imp,
        time_limit=time_limit,
        eps=args.eps,
        seed=args.seed,
        bt_tol=args.bt_tol,
        jobs=args.jobs,
        partition_single=args.partition_single,
    )


def _write_json(outdir: Path, stem: str, report: SolveReport) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{stem}.json").write_text(report.to_json() + "\n", encoding="utf-8")


def _run_one(model: Model, cfg: SolverConfig, name: str, args) -> SolveReport:
    incumbent = None
    if getattr(args, "incumbent", None):
        incumbent = _parse_incumbent(args.incumbent, model)
    return driver.solve(model, cfg, incumbent=incumbent, instance_name=name)


def cmd_solve(args) -> int:
    outdir = Path(args.out)
    rows = [CSV_HEADER]
    for path in _collect_instances(args.instances):
        model = _load(str(path))
        cfg = _config_from_args(args)
        report = _run_one(model, cfg, path.stem, args)
        best = cfg.utmc_n if cfg.mode == "utmc" else \
            (cfg.delta if cfg.mode not in ("mc",) else "-")
        _write_json(outdir, f"{path.stem}-{cfg.mode}", report)
        rows.append(csv_row(report, best))
        print(rows[-1])
    (outdir / "summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    outdir = Path(args.out)
    grid = [int(v) for v in args.utmc_n_list.split(",")] if args.mode == "utmc" \
        else [float(v) for v in args.delta_list.split(",")]
    rows = [CSV_HEADER]
    best_rows = [CSV_HEADER]
    for path in _collect_instances(args.instances):
        model = _load(str(path))
        runs = []
        for value in grid:
            if args.mode == "utmc":
                cfg = _config_from_args(args, utmc_n=int(value))
            else:
                cfg = _config_from_args(args, delta=float(value))
            report = _run_one(model, cfg, path.stem, args)
            tag = f"{path.stem}-{args.mode}-{value:g}" if args.mode != "utmc" \
                else f"{path.stem}-utmc-{value}"
            _write_json(outdir, tag, report)
            runs.append((value, report))
            rows.append(csv_row(report, value))
            print(rows[-1])

        def sort_key(item):
            value, rep = item
            gap = rep.gap_percent if rep.gap_percent is not None else np.inf
            if rep.status == driver.STATUS_GLOBAL:
                gap = 0.0
            return (gap, rep.times["loop_s"] + rep.times["tighten_s"], value)

        best_value, best_report = min(runs, key=sort_key)
        best_rows.append(csv_row(best_report, best_value))
    (outdir / "summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    (outdir / "best.csv").write_text("\n".join(best_rows) + "\n", encoding="utf-8")
    return 0


def cmd_tighten_only(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for path in _collect_instances(args.instances):
        model = _load(str(path))
        incumbent = _parse_incumbent(args.incumbent, model) if args.incumbent \
            else driver.find_incumbent(model, seed=args.seed)
        cfg = TightenConfig(tol=args.bt_tol, mode=args.mode,
                            parallel_width=args.jobs, delta=args.delta)
        report = tighten_bounds(model, incumbent, cfg)
        lines = [TIGHTEN_CSV_HEADER]
        for i in report.variables:
            name = model.variables[i].name
            lines.append(",".join([
                name,
                f"{report.original_lower[i]:g}",
                f"{report.original_upper[i]:g}",
                f"{report.lower[i]:g}",
                f"{report.upper[i]:g}",
                str(report.selector_counts.get(name, 0)),
            ]))
        bc = "inf" if report.bc_is_infinite else f"{report.bc_percent:.2f}"
        lines.append(f"# rounds={report.rounds} bc_percent={bc}")
        text = "\n".join(lines) + "\n"
        (outdir / f"{path.stem}-{args.mode}-bounds.csv").write_text(
            text, encoding="utf-8")
        print(text, end="")
    return 0


def emit_envelope(model: Model, term_index: int, partitions: int,
                  resolution: int, path: Path) -> None:
    """Sample the relaxed feasible region of one product term onto a grid.

    Degree-2 terms only: a squared term yields an ``x,z_min,z_max`` cloud,
    a bilinear term an ``x_i,x_j,z_min,z_max`` cloud.
    """
    if not model.is_normalized():
        model = normalize(model)
    if not model.terms:
        raise ModelError("model has no product terms")
    if not 0 <= term_index < len(model.terms):
        raise ModelError(f"term index {term_index} out of range")
    term = model.terms[term_index]
    if term.degree != 2:
        raise ModelError(
            f"envelope emission supports degree-2 terms, got degree {term.degree}")
    i, j = term.key
    vi = model.variables[i]
    lines = []
    if i == j:
        pm = PartitionMap.uniform(vi.lower, vi.upper, partitions)
        conic, _paired = lemma1_regions((vi.lower, vi.upper), pm)
        lines.append(ENVELOPE_1D_HEADER)
        for x in np.linspace(vi.lower, vi.upper, resolution):
            zmin, zmax = conic.range_at(float(x))
            lines.append(f"{x:.6g},{zmin:.6g},{zmax:.6g}")
    else:
        vj = model.variables[j]
        pm_i = PartitionMap.uniform(vi.lower, vi.upper, partitions)
        pm_j = PartitionMap.uniform(vj.lower, vj.upper, partitions)
        region = bilinear_region((vi.lower, vi.upper), (vj.lower, vj.upper),
                                 pm_i, pm_j)
        lines.append(ENVELOPE_2D_HEADER)
        for x in np.linspace(vi.lower, vi.upper, resolution):
            for y in np.linspace(vj.lower, vj.upper, resolution):
                zmin, zmax = region.range_at(float(x), float(y))
                lines.append(f"{x:.6g},{y:.6g},{zmin:.6g},{zmax:.6g}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_envelope(args) -> int:
    model = _load(args.instances[0])
    out = Path(args.out_file)
    emit_envelope(model, args.term, args.partitions, args.resolution, out)
    print(f"wrote {out}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, default=4.0,
                   help="partition scaling (new half-width = active width / delta)")
    p.add_argument("--utmc-n", type=int, default=10, dest="utmc_n",
                   help="uniform partition count per variable")
    p.add_argument("--time-limit", type=float, default=3600.0)
    p.add_argument("--tol-imp", type=float, default=0.001,
                   help="percent improvement threshold, stop rule (a)")
    p.add_argument("--eps", type=float, default=0.001,
                   help="minimum partition length")
    p.add_argument("--bt-tol", type=float, default=0.01,
                   help="bound-movement convergence tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel subproblems during bound contraction")
    p.add_argument("--incumbent", type=str, default=None,
                   help="manual feasible point, e.g. x=2,y=2")
    p.add_argument("--partition-single", action="store_true",
                   help="partition a single variable per product term")
    p.add_argument("--out", type=str, default="runs")
    p.add_argument("instances", nargs="+", help=".mlt files or directories")


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="polypart",
        description="Global optimization of multilinear mixed-integer programs "
                    "via bound contraction and dynamically partitioned envelopes")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one configuration per instance")
    p.add_argument("--mode", choices=driver.MODES, default="cp-dtmc")
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="grid of deltas (or partition counts)")
    p.add_argument("--mode", choices=driver.MODES, default="tcp-dtmc")
    p.add_argument("--delta-list", type=str, default="2,4,8,10,16,32",
                   dest="delta_list")
    p.add_argument("--utmc-n-list", type=str, default="10,20,40",
                   dest="utmc_n_list")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tighten-only", help="bound contraction report")
    p.add_argument("--mode", choices=("cp", "tcp"), default="tcp")
    _add_common(p)
    p.set_defaults(func=cmd_tighten_only)

    p = sub.add_parser("envelope", help="sample a term's relaxed region to CSV")
    p.add_argument("--term", type=int, default=0)
    p.add_argument("--partitions", type=int, default=1)
    p.add_argument("--resolution", type=int, default=33)
    p.add_argument("--out-file", type=str, default="envelope.csv")
    _add_common(p)
    p.set_defaults(func=cmd_envelope)
    return ap


def main(argv=None) -> int:
    ap = build_arg_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse reports its own message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ModelError, mlt.ParseError, FileNotFoundError,
            driver.NoIncumbentError, driver.ModelInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
