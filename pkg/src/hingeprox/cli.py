"""Command-line entry point: run, solve-exact, prox-check, slope, rmse-table."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .core import ConfigError, ConstructionError, ContractError, DivergenceError, NonConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_ACCEPTANCE = 0, 1, 2, 3


def _cmd_run(args):
    from .harness import ExperimentConfig, resolve_config_path, run_experiment

    cfg = ExperimentConfig.load(resolve_config_path(args.config))
    res = run_experiment(cfg, output_dir=args.output_dir)
    print(f"wrote {len(res.traces)} traces and summary to {res.output_dir}")
    for label, entry in res.summary["solvers"].items():
        fin = entry["median_final"]
        print(f"{label:<8} median final dist_sq={fin['dist_sq']:.3e} obj_gap={fin['obj_gap']:.3e} "
              f"violation={fin['violation']:.3e}")
    return EXIT_OK


def _cmd_solve_exact(args):
    from .problems import attach_reference, load_instance, save_instance

    inst = load_instance(args.problem)
    ref = attach_reference(inst, tol=args.tol)
    out = args.out or args.problem
    save_instance(inst, out)
    print(f"x_star={np.array2string(ref.x_star, precision=12)} f_star={ref.f_star:.15g} "
          f"kkt={ref.kkt_residual:.2e} -> {out}")
    return EXIT_OK


def _cmd_prox_check(args):
    from .checks import prox_property_suite, three_point_suite

    rep = prox_property_suite(args.cases, seed=args.seed, grid_points=args.grid)
    print(f"prox cases={rep.cases} failures={sum(rep.failures.values())} worst_gap={rep.worst_gap:.3e} "
          f"worst_closed_form_diff={rep.worst_cf_diff:.3e}")
    for name, cnt in sorted(rep.failures.items()):
        print(f"  {name}: {cnt}")
    fails, worst = three_point_suite(args.cases, seed=args.seed)
    print(f"three-point cases={args.cases} failures={fails} worst_defect={worst:.3e}")
    return EXIT_OK if rep.ok and fails == 0 else EXIT_ACCEPTANCE


def _cmd_slope(args):
    from .harness import estimate_slope, median_curves
    from .trace import RunTrace

    traces = [RunTrace.read_csv(p) for p in args.traces]
    if len(traces) == 1:
        tr = traces[0]
        xs, ys = tr.column(args.x), tr.column(args.metric)
    else:
        if args.x != "sfo":
            raise ConfigError("median over several traces needs --x sfo")
        cur = median_curves(traces, args.stride)
        xs, ys = cur["sfo"].astype(float), cur[args.metric]
    if args.window > 1:
        from .harness import moving_average

        ys = moving_average(ys, args.window)
    rng = tuple(args.range) if args.range else None
    est = estimate_slope((xs, ys), args.metric, rng)
    print(f"slope {est.slope:.6f} stderr {est.stderr:.2e} points {est.n_points}")
    if args.expect and not args.expect[0] <= est.slope <= args.expect[1]:
        print(f"slope outside expected interval [{args.expect[0]}, {args.expect[1]}]")
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _cmd_rmse_table(args):
    from .harness import format_table, resolve_config_path, rmse_table

    path = resolve_config_path(args.config)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("version") != 1 or data.get("problem", {}).get("type") != "robust_regression":
        raise ConfigError("rmse-table needs a version-1 robust_regression config")
    solver = data["solvers"][0] if data.get("solvers") else None
    rows, inst, _ = rmse_table(data["problem"], solver, seed=data.get("seeds", [0])[0])
    print(format_table(rows, inst))
    vr = next(r for r in rows if r["method"] not in ("OLS", "reference"))
    ols_row = rows[0]
    return EXIT_OK if vr["rmse"] < ols_row["rmse"] else EXIT_ACCEPTANCE


def build_parser():
    ap = argparse.ArgumentParser(prog="hingeprox", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("config", help="config file or shipped config name (e.g. desk_qp)")
    p.add_argument("--output-dir", help="overrides config and $HINGEPROX_OUTPUT_DIR")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("solve-exact", help="pin the reference solution of a problem file")
    p.add_argument("problem")
    p.add_argument("--out")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=_cmd_solve_exact)

    p = sub.add_parser("prox-check", help="randomized prox property suite")
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=10**6)
    p.set_defaults(func=_cmd_prox_check)

    p = sub.add_parser("slope", help="log-log slope of a trace metric")
    p.add_argument("traces", nargs="+")
    p.add_argument("--metric", default="dist_sq", choices=["obj_gap", "violation", "dist_sq"])
    p.add_argument("--x", default="sfo", choices=["sfo", "iter"])
    p.add_argument("--range", type=float, nargs=2)
    p.add_argument("--stride", type=int, default=1000)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--expect", type=float, nargs=2)
    p.set_defaults(func=_cmd_slope)

    p = sub.add_parser("rmse-table", help="OLS vs VR-HPS robust regression table")
    p.add_argument("--config", default="synth1")
    p.set_defaults(func=_cmd_rmse_table)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, ContractError, ConstructionError, NonConvergenceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
