"""Experiment orchestration: configs, runs, traces, summaries, slopes."""

from __future__ import annotations

import json
import os
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .core import ConfigError, DivergenceError
from .problems import (
    QpInstance,
    load_instance,
    make_regression_data,
    make_robust_regression,
    make_synthetic_qp,
    ols,
    rmse,
)
from .solvers import SolverConfig, run
from .trace import COLUMNS, RunTrace, TraceRecorder

CONFIG_VERSION = 1
OUTPUT_ENV = "HINGEPROX_OUTPUT_DIR"
METRICS = ("obj_gap", "violation", "dist_sq")


class EstimationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configs


@dataclass
class ExperimentConfig:
    """Versioned JSON experiment description.

    Keys: version (1), name, problem (recipe dict), solvers (list of solver
    dicts), seeds (list of ints), record_every (SFO units), output_dir,
    wall_clock (bool), thresholds (metric -> value, optional).
    """

    problem: dict
    solvers: list
    seeds: list
    record_every: int = 1000
    output_dir: str = None
    name: str = "experiment"
    wall_clock: bool = False
    thresholds: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data, base_dir=None):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}, got {data.get('version')!r}")
        for key in ("problem", "solvers", "seeds"):
            if key not in data:
                raise ConfigError(f"config is missing required key {key!r}")
        seeds = data["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        solvers = data["solvers"]
        if not isinstance(solvers, list) or not solvers:
            raise ConfigError("solvers must be a non-empty list")
        for s in solvers:
            _solver_config(s, 0, 1)  # validate early
        problem = dict(data["problem"])
        if problem.get("type") == "file" and base_dir is not None:
            problem["path"] = str(Path(base_dir, problem["path"]))
        rec = data.get("record_every", 1000)
        if not isinstance(rec, int) or rec < 1:
            raise ConfigError("record_every must be a positive integer")
        allowed = {"version", "name", "problem", "solvers", "seeds", "record_every", "output_dir", "wall_clock",
                   "thresholds"}
        extra = set(data) - allowed
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(problem, solvers, seeds, rec, data.get("output_dir"), data.get("name", "experiment"),
                   bool(data.get("wall_clock", False)), dict(data.get("thresholds", {})))

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)


def shipped_config_path(name):
    """Path of a config shipped with the package, by stem or file name."""
    fname = name if name.endswith(".json") else name + ".json"
    ref = resources.files("hingeprox") / "configs" / fname
    if not ref.is_file():
        raise ConfigError(f"no shipped config named {name!r}")
    return Path(str(ref))


def resolve_config_path(name_or_path):
    p = Path(name_or_path)
    if p.is_file():
        return p
    return shipped_config_path(name_or_path)


_SOLVER_KEYS = {"algorithm", "t_max", "sfo_budget", "gamma", "step_rule", "nhps", "label"}


def _solver_config(d, seed, record_every, record_iters=None, wall_clock=False):
    if not isinstance(d, dict):
        raise ConfigError("each solver entry must be an object")
    extra = set(d) - _SOLVER_KEYS
    if extra:
        raise ConfigError(f"unknown solver keys {sorted(extra)}")
    kw = {k: v for k, v in d.items() if k != "label"}
    try:
        return SolverConfig(seed=seed, record_every=record_every, record_iters=record_iters, wall_clock=wall_clock,
                            **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def build_problem(recipe):
    """Instance (with reference attached) from a problem recipe dict."""
    kind = recipe.get("type")
    try:
        if kind == "synthetic_qp":
            args = {k: v for k, v in recipe.items() if k != "type"}
            return make_synthetic_qp(**args)
        if kind == "file":
            inst = load_instance(recipe["path"])
            if inst.reference is None:
                from .problems import attach_reference

                attach_reference(inst)
            return inst
        if kind == "robust_regression":
            return build_robust_regression(recipe)[1]
    except TypeError as exc:
        raise ConfigError(f"bad problem recipe: {exc}") from exc
    raise ConfigError(f"unknown problem type {kind!r}")


def build_robust_regression(recipe):
    data_kw = dict(recipe.get("data", {}))
    ds = make_regression_data(**data_kw)
    inst = make_robust_regression(ds, K=recipe.get("K", 30), sigma_train=recipe.get("sigma_train", 1.0),
                                  eps=recipe.get("eps"), eps_slack=recipe.get("eps_slack", 1.5),
                                  seed=recipe.get("perturb_seed", 0))
    return ds, inst


# ---------------------------------------------------------------------------
# running


@dataclass
class ExperimentResult:
    traces: dict
    summary: dict
    output_dir: Path = None


def solver_label(d):
    return d.get("label") or d["algorithm"]


def common_grid(traces, stride):
    """SFO grid shared by all traces: multiples of stride up to the shortest run."""
    end = min(tr.sfo[-1] for tr in traces)
    start = max(tr.sfo[0] for tr in traces)
    first = ((start + stride - 1) // stride) * stride
    return np.arange(first, end + 1, stride, dtype=np.int64)


def step_values(trace, metric, grid):
    """Last recorded value at or before each grid point."""
    sfo = np.asarray(trace.sfo)
    vals = trace.column(metric)
    idx = np.searchsorted(sfo, grid, side="right") - 1
    return vals[np.clip(idx, 0, None)]


def median_curves(traces, stride):
    grid = common_grid(traces, stride)
    out = {"sfo": grid}
    for metric in METRICS:
        stack = np.vstack([step_values(tr, metric, grid) for tr in traces])
        out[metric] = np.median(stack, axis=0)
    return out


def sfo_to_threshold(grid, values, threshold):
    """First grid SFO where values <= threshold, or None."""
    hit = np.nonzero(np.asarray(values) <= threshold)[0]
    return int(grid[hit[0]]) if hit.size else None


def run_experiment(cfg: ExperimentConfig, output_dir=None, instance=None):
    out_dir = output_dir or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "hingeprox_out"
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    inst = instance if instance is not None else build_problem(cfg.problem)
    problem, ref = inst.problem, inst.reference
    traces = {}
    summary = {"name": cfg.name, "seeds": list(cfg.seeds), "record_every": cfg.record_every,
               "f_star": ref.f_star, "x_star": [float(v) for v in ref.x_star], "solvers": {}}
    for sd in cfg.solvers:
        label = solver_label(sd)
        runs = []
        for seed in cfg.seeds:
            sc = _solver_config(sd, seed, cfg.record_every, wall_clock=cfg.wall_clock)
            t0 = time.perf_counter()
            try:
                res = run(problem, sc, reference=ref)
            except DivergenceError as exc:
                raise DivergenceError(f"{label} seed {seed}: {exc}", exc.iteration, exc.x) from exc
            wall = time.perf_counter() - t0
            tr = res.trace
            tr.write_csv(out_dir / "traces" / f"{label}_seed{seed}.csv")
            traces[(label, seed)] = tr
            runs.append({"seed": seed, "sfo_used": res.sfo_used, "iterations": res.iterations,
                         "final_dist_sq": tr.dist_sq[-1], "final_obj_gap": tr.obj_gap[-1],
                         "final_violation": tr.violation[-1], "inner_iter_total": res.inner_iter_total,
                         "wall_s": wall if cfg.wall_clock else None})
        curves = median_curves([traces[(label, s)] for s in cfg.seeds], cfg.record_every)
        entry = {"runs": runs, "median_final": {m: float(curves[m][-1]) for m in METRICS}}
        if cfg.thresholds:
            entry["sfo_to_threshold"] = {m: sfo_to_threshold(curves["sfo"], curves[m], thr)
                                         for m, thr in cfg.thresholds.items()}
        summary["solvers"][label] = entry
        summary.setdefault("_curves", {})[label] = curves
    curves = summary.pop("_curves")
    for metric in METRICS:
        _write_metric_csv(out_dir / f"{metric}.csv", curves, metric)
    with open(out_dir / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExperimentResult(traces, summary, out_dir)


def _write_metric_csv(path, curves, metric):
    """Seed-median curve per solver on the union of the solvers' SFO grids."""
    labels = list(curves)
    grid = np.unique(np.concatenate([curves[l]["sfo"] for l in labels]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["sfo"] + labels) + "\n")
        lookup = {l: dict(zip(curves[l]["sfo"].tolist(), curves[l][metric].tolist())) for l in labels}
        for g in grid.tolist():
            cells = [str(g)]
            for l in labels:
                v = lookup[l].get(g)
                cells.append("" if v is None else f"{v:.17g}")
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# post-processing


def moving_average(series, window):
    """Trailing mean over up to ``window`` most recent points."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    if window == 1 or x.size == 0:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


@dataclass
class SlopeEstimate:
    slope: float
    stderr: float
    intercept: float
    n_points: int
    excluded: int

    def __str__(self):
        return f"{self.slope:.4f} +/- {self.stderr:.2g} ({self.n_points} points)"


def estimate_slope(trace, metric="dist_sq", t_range=None, x="iter"):
    """Least-squares slope of log(metric) against log(x) over ``t_range``.

    ``trace`` is a RunTrace or a pair of arrays (x values, metric values).
    """
    if isinstance(trace, RunTrace):
        xs = trace.column(x)
        ys = trace.column(metric)
    else:
        xs, ys = (np.asarray(a, dtype=float) for a in trace)
    sel = np.ones(xs.size, dtype=bool)
    if t_range is not None:
        sel &= (xs >= t_range[0]) & (xs <= t_range[1])
    sel &= xs > 0
    pos = sel & (ys > 0) & np.isfinite(ys)
    excluded = int(sel.sum() - pos.sum())
    if excluded:
        warnings.warn(f"excluded {excluded} non-positive {metric} values from the slope fit")
    if pos.sum() < 10:
        raise EstimationError(f"need at least 10 positive points in range, got {int(pos.sum())}")
    lx, ly = np.log(xs[pos]), np.log(ys[pos])
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    k = lx.size
    s2 = float(resid @ resid) / max(k - 2, 1)
    cov = s2 * np.linalg.inv(A.T @ A)
    return SlopeEstimate(float(coef[0]), float(np.sqrt(cov[0, 0])), float(coef[1]), int(k), excluded)


def log_grid(lo, hi, points):
    return sorted({int(round(v)) for v in np.logspace(np.log10(lo), np.log10(hi), points)})


def seed_median_at_iters(problem, reference, config_dict, seeds, iters):
    """Run one solver over seeds, returning (iters, median dist_sq, per-seed matrix)."""
    rows = []
    for seed in seeds:
        sc = _solver_config(config_dict, seed, None, record_iters=iters)
        res = run(problem, sc, reference=reference)
        tr = res.trace
        lookup = dict(zip(tr.iters, tr.dist_sq))
        rows.append([lookup[t] for t in iters])
    mat = np.asarray(rows)
    return np.asarray(iters), np.median(mat, axis=0), mat


# ---------------------------------------------------------------------------
# robust regression table


def rmse_table(recipe, solver=None, seed=0):
    """OLS vs VR-HPS vs reference RMSE on the held-out split.

    Returns a list of rows {method, rmse, wall_s} plus the instance.
    """
    ds, inst = build_robust_regression(recipe)
    test = ds.split("test")
    X, y = ds.split("train")
    rows = []
    t0 = time.perf_counter()
    x_ols = ols(X, y)
    rows.append({"method": "OLS", "rmse": rmse(x_ols, test), "wall_s": time.perf_counter() - t0})
    sd = dict(solver or recipe.get("solver", {"algorithm": "VR_HPS", "t_max": 200000}))
    sc = _solver_config(sd, seed, None)
    t0 = time.perf_counter()
    res = run(inst.problem, sc)
    rows.append({"method": sd["algorithm"].replace("_", "-"), "rmse": rmse(res.x_final, test),
                 "wall_s": time.perf_counter() - t0, "x": res.x_final})
    rows.append({"method": "reference", "rmse": rmse(inst.reference.x_star, test), "wall_s": None,
                 "x": inst.reference.x_star})
    return rows, inst, ds


def format_table(rows, inst):
    lines = [f"n={inst.n} m={inst.m} eps={inst.eps:.6g}", f"{'method':<12}{'RMSE':>12}{'wall (s)':>12}"]
    for r in rows:
        wall = "" if r["wall_s"] is None else f"{r['wall_s']:.2f}"
        lines.append(f"{r['method']:<12}{r['rmse']:>12.4f}{wall:>12}")
    return "\n".join(lines)
