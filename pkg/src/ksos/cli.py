"""Command-line orchestration.

Subcommands: generate synthetic CSVs, fit a band model to an archive, tune
hyperparameters, evaluate calibrated intervals, and run multi-seed benchmark
sweeps. All commands are driven by a strictly validated JSON config and are
reproducible from the recorded seeds. Exit codes: 0 success, 2 config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bands import BandModel, fit_band_model
from .conformal import calibrate, intervals
from .datasets import Dataset, SplitPlan, SyntheticCase, generate, load_csv, save_csv, split
from .errors import KsosError, NumericalError, ParameterError
from .metrics import evaluate_intervals
from .predictor import fit_kernel_ridge, median_heuristic, precomputed
from .rng import describe as describe_rng
from .solver import (
    OperatorPenalty,
    ProblemSpec,
    SolverSettings,
    TrainSetPenalty,
    warm_start_sweep,
)
from .spectral import KernelSpec, RegParams, kernel_model
from .tuning import TuneConfig, normalize_hyperparameters, tune

logger = logging.getLogger(__name__)

ARCHIVE_VERSION = 1

# allowed keys per config section; unknown keys are rejected outright
_SCHEMA = {
    "data": {"case", "d", "beta", "n", "seed", "csv"},
    "split": {"n_pretrain", "n_cal", "n_test"},
    "alpha": None,
    "b": None,
    "penalty": {"kind", "lambda", "lambda1", "lambda2"},
    "kernel": {"theta_low", "theta_up"},
    "reg": {"lambda1", "lambda2"},
    "predictor": {"theta", "noise"},
    "normalize": None,
    "calibration_mode": None,
    "solver": {"max_iter", "tol"},
    "tune": {
        "theta_grid",
        "theta_points",
        "theta_span",
        "lambda_grid",
        "folds",
        "hsic_replicates",
        "kw_permutations",
        "significance",
        "penalty_kind",
        "asym_refine",
        "full_2d_search",
    },
    "use_tune": None,
    "metrics": {"n_x", "n_y", "wsc_regions", "wsc_size"},
    "seed": None,
    "seeds": None,
    "benchmark": {"mode", "lambda_grid"},
    "out": None,
}

_DEFAULTS = {
    "alpha": 0.1,
    "b": 10.0,
    "penalty": {"kind": "trainset", "lambda": 1.0},
    "kernel": {"theta_low": None, "theta_up": None},
    "reg": {"lambda1": 1.0, "lambda2": 1.0},
    "predictor": {"theta": None, "noise": None},
    "normalize": True,
    "calibration_mode": "symmetric",
    "solver": {"max_iter": 10000, "tol": 1e-2},
    "metrics": {"n_x": 100, "n_y": 1000, "wsc_regions": 10, "wsc_size": 100},
    "use_tune": False,
    "seed": 0,
}


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    if not isinstance(config, dict):
        raise ParameterError("config must be a JSON object")
    for key, value in config.items():
        if key not in _SCHEMA:
            raise ParameterError(f"unknown config key {key!r}")
        allowed = _SCHEMA[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ParameterError(f"config key {key!r} must be an object")
            for sub in value:
                if sub not in allowed:
                    raise ParameterError(f"unknown config key {key}.{sub}")


def resolve_config(config: dict) -> dict:
    merged = {}
    for key, default in _DEFAULTS.items():
        if isinstance(default, dict):
            merged[key] = {**default, **config.get(key, {})}
        else:
            merged[key] = config.get(key, default)
    for key in config:
        if key not in merged:
            merged[key] = config[key]
    return merged


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return {np.inf: "inf", -np.inf: "-inf"}.get(obj, "nan")
    return obj


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _penalty_from_config(section: dict):
    kind = section.get("kind", "trainset")
    if kind == "none":
        return None
    if kind == "trainset":
        return TrainSetPenalty(float(section.get("lambda", 1.0)))
    if kind == "operator":
        lam1 = float(section.get("lambda1", section.get("lambda", 1.0)))
        lam2 = float(section.get("lambda2", section.get("lambda", 1.0)))
        return OperatorPenalty(lam1, lam2)
    raise ParameterError(f"unknown penalty kind {kind!r}")


def _load_data(cfg: dict, seed: int) -> tuple[Dataset, SyntheticCase | None]:
    data = cfg.get("data")
    if not data:
        raise ParameterError("config needs a data section")
    if "csv" in data:
        return load_csv(data["csv"]), None
    if "case" not in data:
        raise ParameterError("data section needs either 'case' or 'csv'")
    d = int(data.get("d", 1))
    beta = data.get("beta")
    case = SyntheticCase(int(data["case"]), d=d, beta=None if beta is None else np.asarray(beta, dtype=float))
    split_cfg = cfg.get("split")
    default_n = (
        sum(int(split_cfg[k]) for k in ("n_pretrain", "n_cal", "n_test")) if split_cfg else 100
    )
    n = int(data.get("n", default_n))
    return generate(case, n, seed=int(data.get("seed", seed))), case


def _split_data(ds: Dataset, cfg: dict, seed: int):
    split_cfg = cfg.get("split")
    if not split_cfg:
        return ds, None, None
    plan = SplitPlan(
        int(split_cfg["n_pretrain"]), int(split_cfg["n_cal"]), int(split_cfg["n_test"]), seed=seed
    )
    return split(ds, plan)


def _build_predictor(pre: Dataset, full: Dataset, cfg: dict):
    if full.m_hat is not None:
        return precomputed(full.X, full.m_hat)
    pc = cfg["predictor"]
    return fit_kernel_ridge(pre.X, pre.y, theta=pc.get("theta"), noise=pc.get("noise"))


def _tune_config(cfg: dict) -> TuneConfig:
    section = dict(cfg.get("tune", {}))
    if "theta_grid" in section and section["theta_grid"] is not None:
        section["theta_grid"] = tuple(section["theta_grid"])
    if "lambda_grid" in section:
        section["lambda_grid"] = tuple(section["lambda_grid"])
    solver_cfg = cfg["solver"]
    return TuneConfig(
        b=float(cfg["b"]),
        solver=SolverSettings(int(solver_cfg["max_iter"]), float(solver_cfg["tol"])),
        **section,
    )


def fit_pipeline(cfg: dict, seed: int):
    """Shared fit path: data, split, predictor, normalization, solve."""
    ds, case = _load_data(cfg, seed)
    pre, cal, test = _split_data(ds, cfg, seed)
    predictor = _build_predictor(pre, ds, cfg)
    solver_cfg = cfg["solver"]
    settings = SolverSettings(int(solver_cfg["max_iter"]), float(solver_cfg["tol"]))

    selected = None
    if cfg.get("use_tune"):
        result = tune(pre.X, pre.y, predictor, _tune_config(cfg), seed=seed)
        selected = result
        theta_low, theta_up = result.theta_low, result.theta_up
        penalty = _penalty_from_config(
            {**cfg["penalty"], "lambda": result.lam_pen, "lambda1": result.lam_pen, "lambda2": result.lam_pen}
        )
        norm = result.normalization
    else:
        penalty = _penalty_from_config(cfg["penalty"])
        if cfg["normalize"]:
            norm = normalize_hyperparameters(pre.X, pre.y, predictor, float(cfg["b"]), settings)
        else:
            norm = None
        theta_low = cfg["kernel"]["theta_low"]
        theta_up = cfg["kernel"]["theta_up"]
        if theta_low is None:
            theta_low = norm.theta_init if norm is not None else median_heuristic(pre.X)
        if theta_up is None:
            theta_up = theta_low

    if norm is not None and not norm.unnormalized:
        b, reg_low, reg_up = norm.b_scaled, norm.reg_low, norm.reg_up
    else:
        reg = RegParams(float(cfg["reg"]["lambda1"]), float(cfg["reg"]["lambda2"]))
        b, reg_low, reg_up = float(cfg["b"]), reg, reg

    bm, report = fit_band_model(
        pre.X,
        pre.y,
        predictor,
        theta_low=float(theta_low),
        theta_up=float(theta_up),
        b=b,
        reg_low=reg_low,
        reg_up=reg_up,
        penalty=penalty,
        settings=settings,
        normalization=norm,
    )
    if not np.isfinite(report.objective):
        raise NumericalError("band fit produced a non-finite objective")
    return {
        "band_model": bm,
        "report": report,
        "pre": pre,
        "cal": cal,
        "test": test,
        "case": case,
        "penalty": penalty,
        "tune_result": selected,
        "theta": (float(theta_low), float(theta_up)),
        "b": b,
    }


def _report_payload(report) -> dict:
    return {
        "iterations": report.iterations,
        "converged": report.converged,
        "objective": report.objective,
        "grad_inf_norm": report.grad_inf_norm,
        "n_evals": report.n_evals,
        "constraint_violation": report.constraint_violation,
        "duality_gap_rel": report.duality_gap_rel,
        "message": report.message,
    }


def save_model(bm: BandModel, report, cfg: dict, out_dir) -> None:
    """Model archive: CSV matrices plus a JSON manifest, version tagged."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "A_low.csv", bm.pair.A_low, delimiter=",", fmt="%.17e")
    np.savetxt(out / "A_up.csv", bm.pair.A_up, delimiter=",", fmt="%.17e")
    np.savetxt(out / "X_train.csv", bm.X_train, delimiter=",", fmt="%.17e")
    pred = bm.predictor
    if pred.mode == "kernel_ridge":
        np.savetxt(out / "predictor_weights.csv", pred.weights, delimiter=",", fmt="%.17e")
        pred_meta = {"mode": "kernel_ridge", "theta": pred.spec.lengthscale, "noise": pred.noise}
    else:
        np.savetxt(out / "predictor_values.csv", pred.values, delimiter=",", fmt="%.17e")
        np.savetxt(out / "predictor_inputs.csv", pred.X, delimiter=",", fmt="%.17e")
        pred_meta = {"mode": "precomputed"}
    norm = bm.normalization
    manifest = {
        "format_version": ARCHIVE_VERSION,
        "library_version": __version__,
        "kernel_low": {"family": "matern52", "lengthscale": bm.km_low.spec.lengthscale},
        "kernel_up": {"family": "matern52", "lengthscale": bm.km_up.spec.lengthscale},
        "jitter_low": bm.km_low.gf.jitter,
        "jitter_up": bm.km_up.gf.jitter,
        "predictor": pred_meta,
        "normalization": None
        if norm is None
        else {
            "theta_init": norm.theta_init,
            "b_user": norm.b_user,
            "b_scaled": norm.b_scaled,
            "reg_low": [norm.reg_low.lam1, norm.reg_low.lam2],
            "reg_up": [norm.reg_up.lam1, norm.reg_up.lam2],
            "mean_width0": norm.mean_width0,
            "unnormalized": norm.unnormalized,
        },
        "solve_report": _report_payload(report),
        "config": cfg,
        "rng": describe_rng(int(cfg.get("seed", 0))),
    }
    _write_json(out / "manifest.json", manifest)


def load_model(in_dir) -> BandModel:
    src = Path(in_dir)
    try:
        with open(src / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ParameterError(f"not a model archive: {in_dir}") from exc
    if manifest.get("format_version") != ARCHIVE_VERSION:
        raise ParameterError(f"unsupported archive version {manifest.get('format_version')}")
    A_low = np.loadtxt(src / "A_low.csv", delimiter=",", ndmin=2)
    A_up = np.loadtxt(src / "A_up.csv", delimiter=",", ndmin=2)
    X = np.loadtxt(src / "X_train.csv", delimiter=",", ndmin=2)
    km_low = kernel_model(
        X, KernelSpec(manifest["kernel_low"]["lengthscale"]), manifest["jitter_low"]
    )
    if manifest["kernel_up"] == manifest["kernel_low"]:
        km_up = km_low
    else:
        km_up = kernel_model(
            X, KernelSpec(manifest["kernel_up"]["lengthscale"]), manifest["jitter_up"]
        )
    pmeta = manifest["predictor"]
    if pmeta["mode"] == "kernel_ridge":
        weights = np.loadtxt(src / "predictor_weights.csv", delimiter=",", ndmin=1)
        from .predictor import Predictor

        pred = Predictor(
            mode="kernel_ridge",
            X=X,
            weights=weights,
            spec=KernelSpec(pmeta["theta"]),
            noise=pmeta["noise"],
        )
    else:
        values = np.loadtxt(src / "predictor_values.csv", delimiter=",", ndmin=1)
        inputs = np.loadtxt(src / "predictor_inputs.csv", delimiter=",", ndmin=2)
        pred = precomputed(inputs, values)
    from .solver import BandPair

    return BandModel(pair=BandPair(A_low, A_up), predictor=pred, km_low=km_low, km_up=km_up)


def cmd_generate(args) -> int:
    beta = None if args.beta is None else np.asarray(args.beta, dtype=float)
    case = SyntheticCase(args.case, d=args.d, beta=beta)
    ds = generate(case, args.n, seed=args.seed)
    save_csv(ds, args.out)
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def cmd_fit(args) -> int:
    cfg = resolve_config(load_config(args.config))
    _apply_overrides(cfg, args)
    result = fit_pipeline(cfg, int(cfg["seed"]))
    out = Path(cfg.get("out") or "model")
    save_model(result["band_model"], result["report"], cfg, out)
    report = result["report"]
    print(
        f"fit: objective={report.objective:.6g} iterations={report.iterations} "
        f"converged={report.converged} violation={report.constraint_violation:.3g} -> {out}"
    )
    return 0


def cmd_tune(args) -> int:
    cfg = resolve_config(load_config(args.config))
    _apply_overrides(cfg, args)
    seed = int(cfg["seed"])
    ds, _ = _load_data(cfg, seed)
    pre, _, _ = _split_data(ds, cfg, seed)
    predictor = _build_predictor(pre, ds, cfg)
    result = tune(pre.X, pre.y, predictor, _tune_config(cfg), seed=seed)
    out = Path(cfg.get("out") or "tune_result.json")
    payload = result.to_dict()
    payload["config"] = cfg
    payload["library_version"] = __version__
    _write_json(out, payload)
    print(
        f"tune: theta_low={result.theta_low:.4g} theta_up={result.theta_up:.4g} "
        f"lambda_pen={result.lam_pen:.4g} fallback={result.fallback} -> {out}"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(load_config(args.config))
    _apply_overrides(cfg, args)
    seed = int(cfg["seed"])
    if not cfg.get("split"):
        raise ParameterError("evaluate needs a split section")
    result = fit_pipeline(cfg, seed)
    bm, cal, test, case = result["band_model"], result["cal"], result["test"], result["case"]
    cal_result = calibrate(bm, cal.X, cal.y, float(cfg["alpha"]), mode=cfg["calibration_mode"])
    iv = intervals(bm, cal_result, test.X)
    mcfg = cfg["metrics"]
    report = evaluate_intervals(
        iv,
        test.y,
        test.X,
        alpha=float(cfg["alpha"]),
        case=case,
        interval_fn=None if case is None else (lambda Xp: intervals(bm, cal_result, Xp)),
        n_x=int(mcfg["n_x"]),
        n_y=int(mcfg["n_y"]),
        region_count=int(mcfg["wsc_regions"]),
        region_size=int(mcfg["wsc_size"]),
        seed=seed,
    )
    out = Path(cfg.get("out") or "evaluation")
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload.update(
        {
            "config": cfg,
            "library_version": __version__,
            "solve_report": _report_payload(result["report"]),
            "quantile": cal_result.q,
            "quantile_low": cal_result.q_low,
            "quantile_up": cal_result.q_up,
            "seed": seed,
        }
    )
    _write_json(out / "metrics.json", payload)
    _write_metric_rows(out / "metrics.csv", [(seed, cfg["penalty"].get("lambda"), report, result["report"])])
    print(
        f"evaluate: coverage={report.marginal_coverage:.4f} mean_width={report.mean_width:.4g} "
        f"wsc={report.wsc:.4f} -> {out}"
    )
    return 0


def _metric_row(seed, lam, report, solve_report) -> list:
    return [
        seed,
        "" if lam is None else lam,
        report.mean_width,
        report.marginal_coverage,
        report.wsc,
        report.wsc_low,
        report.wsc_up,
        "" if report.acg is None else report.acg,
        "" if report.acg_low is None else report.acg_low,
        "" if report.acg_up is None else report.acg_up,
        solve_report.iterations,
        solve_report.converged,
    ]


def _write_metric_rows(path, entries) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            [
                "seed",
                "lambda_pen",
                "mean_width",
                "coverage",
                "wsc",
                "wsc_low",
                "wsc_up",
                "acg",
                "acg_low",
                "acg_up",
                "iterations",
                "converged",
            ]
        )
        for seed, lam, report, solve_report in entries:
            writer.writerow(_metric_row(seed, lam, report, solve_report))


def _benchmark_one(cfg: dict, seed: int, lam: float):
    run_cfg = json.loads(json.dumps(cfg))
    run_cfg["seed"] = seed
    run_cfg["penalty"] = {**cfg["penalty"], "lambda": lam, "lambda1": lam, "lambda2": lam}
    result = fit_pipeline(run_cfg, seed)
    bm, cal, test, case = result["band_model"], result["cal"], result["test"], result["case"]
    cal_result = calibrate(bm, cal.X, cal.y, float(cfg["alpha"]), mode=cfg["calibration_mode"])
    iv = intervals(bm, cal_result, test.X)
    mcfg = cfg["metrics"]
    report = evaluate_intervals(
        iv,
        test.y,
        test.X,
        alpha=float(cfg["alpha"]),
        case=case,
        interval_fn=None if case is None else (lambda Xp: intervals(bm, cal_result, Xp)),
        n_x=int(mcfg["n_x"]),
        n_y=int(mcfg["n_y"]),
        region_count=int(mcfg["wsc_regions"]),
        region_size=int(mcfg["wsc_size"]),
        seed=seed,
    )
    return seed, lam, report, result["report"]


def _benchmark_warmstart(cfg: dict, seed: int, grid):
    """Warm versus cold iteration ledger on one seed."""
    run_cfg = json.loads(json.dumps(cfg))
    run_cfg["seed"] = seed
    ds, _ = _load_data(run_cfg, seed)
    pre, _, _ = _split_data(ds, run_cfg, seed)
    predictor = _build_predictor(pre, ds, run_cfg)
    solver_cfg = cfg["solver"]
    settings = SolverSettings(int(solver_cfg["max_iter"]), float(solver_cfg["tol"]))
    norm = normalize_hyperparameters(pre.X, pre.y, predictor, float(cfg["b"]), settings)
    theta = cfg["kernel"]["theta_low"] or norm.theta_init
    from .predictor import predict as predict_fn

    km = kernel_model(pre.X, KernelSpec(float(theta)))
    kind = cfg["penalty"].get("kind", "trainset")
    penalty = TrainSetPenalty(float(grid[0])) if kind == "trainset" else OperatorPenalty(
        float(grid[0]), float(grid[0])
    )
    spec = ProblemSpec(
        residuals=pre.y - predict_fn(predictor, pre.X),
        km_low=km,
        km_up=km,
        b=norm.b_scaled,
        reg_low=norm.reg_low,
        reg_up=norm.reg_up,
        penalty=penalty,
    )
    warm = warm_start_sweep(spec, grid, warm=True, settings=settings)
    cold = warm_start_sweep(spec, grid, warm=False, settings=settings)
    return seed, [
        {
            "lambda_pen": lam,
            "warm_iterations": wr.iterations,
            "cold_iterations": cr.iterations,
        }
        for (lam, _, wr), (_, _, cr) in zip(warm, cold)
    ]


def cmd_benchmark(args) -> int:
    cfg = resolve_config(load_config(args.config))
    _apply_overrides(cfg, args)
    bench = cfg.get("benchmark") or {}
    mode = bench.get("mode", "sweep")
    grid = [float(v) for v in bench.get("lambda_grid", [])]
    seeds = [int(s) for s in cfg.get("seeds") or [int(cfg["seed"])]]
    if not grid:
        raise ParameterError("benchmark needs a nonempty benchmark.lambda_grid")
    if sorted(grid) != grid:
        raise ParameterError("benchmark.lambda_grid must be ascending")
    out = Path(cfg.get("out") or "benchmark")
    out.mkdir(parents=True, exist_ok=True)
    threads = max(1, int(args.threads))

    if mode == "warmstart":
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                ledgers = list(pool.map(lambda s: _benchmark_warmstart(cfg, s, grid), seeds))
        else:
            ledgers = [_benchmark_warmstart(cfg, s, grid) for s in seeds]
        rows = []
        warm_total = cold_total = 0
        for seed, entries in ledgers:
            for e in entries:
                rows.append([seed, e["lambda_pen"], e["warm_iterations"], e["cold_iterations"]])
                warm_total += e["warm_iterations"]
                cold_total += e["cold_iterations"]
        import csv as _csv

        with open(out / "iterations.csv", "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["seed", "lambda_pen", "warm_iterations", "cold_iterations"])
            writer.writerows(rows)
        summary = {
            "mode": mode,
            "warm_total": warm_total,
            "cold_total": cold_total,
            "warm_over_cold": warm_total / cold_total if cold_total else None,
            "config": cfg,
            "library_version": __version__,
        }
        _write_json(out / "summary.json", summary)
        print(f"benchmark(warmstart): warm={warm_total} cold={cold_total} -> {out}")
        return 0

    if mode != "sweep":
        raise ParameterError(f"unknown benchmark mode {mode!r}")
    tasks = [(seed, lam) for seed in seeds for lam in grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(lambda t: _benchmark_one(cfg, *t), tasks))
    else:
        entries = [_benchmark_one(cfg, *t) for t in tasks]
    _write_metric_rows(out / "rows.csv", entries)
    summary = {
        "mode": mode,
        "rows": len(entries),
        "mean_coverage": float(np.mean([r.marginal_coverage for _, _, r, _ in entries])),
        "mean_width": float(np.mean([r.mean_width for _, _, r, _ in entries])),
        "config": cfg,
        "library_version": __version__,
    }
    _write_json(out / "summary.json", summary)
    print(f"benchmark(sweep): {len(entries)} rows -> {out}")
    return 0


def _apply_overrides(cfg: dict, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ksos",
        description="Adaptive asymmetric conformal prediction bands via kernel sum-of-squares",
    )
    parser.add_argument("--version", action="version", version=f"ksos {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset to CSV")
    g.add_argument("--case", type=int, required=True, choices=range(1, 7))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--beta", type=float, nargs="+", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    for name, func, help_text in (
        ("fit", cmd_fit, "fit a band model and write a model archive"),
        ("tune", cmd_tune, "select hyperparameters by cross-validated HSIC"),
        ("evaluate", cmd_evaluate, "fit, calibrate, and report interval metrics"),
        ("benchmark", cmd_benchmark, "multi-seed sweeps and warm-start ledgers"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        if name == "benchmark":
            p.add_argument("--threads", type=int, default=1)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("KSOS_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except KsosError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
