"""Acceptance suite: one test per exit criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The expensive fixtures
(20-seed pipelines, 20-seed tuning sweeps) are session scoped and shared
between criteria.
"""

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from ksos.bands import fit_band_model, gap_bound_operator, gap_bound_trainset
from ksos.conformal import calibrate, conformal_quantile, coverage, intervals
from ksos.datasets import SplitPlan, SyntheticCase, generate, split
from ksos.predictor import fit_kernel_ridge, predict
from ksos.solver import (
    OperatorPenalty,
    ProblemSpec,
    SolverSettings,
    TrainSetPenalty,
    asym_dual,
    band_values_on_train,
    operator_dual,
    recover_band_pair,
    solve,
    trainset_dual,
    warm_start_sweep,
)
from ksos.spectral import KernelSpec, RegParams, kernel_model, nuclear_norm
from ksos.tuning import (
    TuneConfig,
    kruskal_wallis_perm,
    normalize_hyperparameters,
    tune,
)
from ksos.verification import fd_gradient, hsic_brute, primal_brute, primal_value

ALPHA = 0.1
N_SEEDS = 20


def _case1_pipeline(seed):
    case = SyntheticCase(1)
    ds = generate(case, 100 + 2000 + 1000, seed=seed)
    pre, cal, test = split(ds, SplitPlan(100, 2000, 1000, seed=seed))
    pred = fit_kernel_ridge(pre.X, pre.y)
    norm = normalize_hyperparameters(pre.X, pre.y, pred, 10.0)
    bm, report = fit_band_model(
        pre.X,
        pre.y,
        pred,
        theta_low=norm.theta_init,
        theta_up=norm.theta_init,
        b=norm.b_scaled,
        reg_low=norm.reg_low,
        reg_up=norm.reg_up,
        penalty=TrainSetPenalty(1.0),
        normalization=norm,
    )
    cal_result = calibrate(bm, cal.X, cal.y, ALPHA)
    iv = intervals(bm, cal_result, test.X)
    residuals = pre.y - predict(pred, pre.X)
    return {
        "band_model": bm,
        "report": report,
        "coverage": coverage(iv, test.y),
        "residual_iqr": float(np.subtract(*np.percentile(residuals, [75, 25]))),
    }


@pytest.fixture(scope="session")
def pipeline_runs():
    start = time.time()
    with ThreadPoolExecutor(max_workers=2) as pool:
        runs = list(pool.map(_case1_pipeline, range(N_SEEDS)))
    elapsed = time.time() - start
    for run in runs:
        run["elapsed_total"] = elapsed
    return runs


def _limit_problem(n=50, seed=0, theta=0.5, shared=True):
    case = SyntheticCase(1)
    ds = generate(case, n, seed=seed)
    pred = fit_kernel_ridge(ds.X, ds.y)
    residuals = ds.y - predict(pred, ds.X)
    km = kernel_model(ds.X, KernelSpec(theta))
    return ds, pred, residuals, km


@pytest.fixture(scope="session")
def limit_fits():
    """Penalty-limit fits reused by criteria 2 and 5."""
    ds, pred, residuals, km = _limit_problem(n=50, seed=0)
    settings = SolverSettings(tol=1e-4)
    spec_ts = ProblemSpec(
        residuals=residuals,
        km_low=km,
        km_up=km,
        b=1.0,
        reg_low=RegParams(0.0, 1.0),
        reg_up=RegParams(0.0, 1.0),
        penalty=TrainSetPenalty(1e6),
    )
    ds_ts, rep_ts = solve(spec_ts, settings=settings)
    bp_ts = recover_band_pair(ds_ts, spec_ts)

    spec_op = ProblemSpec(
        residuals=residuals,
        km_low=km,
        km_up=km,
        b=1.0,
        reg_low=RegParams(0.1, 1.0),
        reg_up=RegParams(0.1, 1.0),
        penalty=OperatorPenalty(1e6, 1e6),
    )
    ds_op, rep_op = solve(spec_op, settings=settings)
    bp_op = recover_band_pair(ds_op, spec_op)
    return {
        "data": (ds, pred, residuals, km),
        "trainset": (spec_ts, bp_ts, rep_ts),
        "operator": (spec_op, bp_op, rep_op),
    }


def test_criterion_1_marginal_coverage(pipeline_runs):
    covs = np.array([run["coverage"] for run in pipeline_runs])
    mean_cov = float(np.mean(covs))
    elapsed = pipeline_runs[0]["elapsed_total"]
    assert elapsed <= 15 * 60, f"runtime {elapsed:.0f}s exceeds 15 min"
    assert 0.88 <= mean_cov <= 0.92, f"mean coverage {mean_cov:.4f}"
    assert np.min(covs) >= 0.86, f"worst seed coverage {np.min(covs):.4f}"
    print(
        f"\ncriterion 1: PASS (mean coverage {mean_cov:.4f}, worst {np.min(covs):.4f}, "
        f"{elapsed:.0f}s for {N_SEEDS} seeds)"
    )


def test_criterion_2_training_set_coverage(pipeline_runs, limit_fits):
    checked = 0
    worst = 0.0
    for run in pipeline_runs:
        report = run["report"]
        if not report.converged:
            continue
        ratio = report.constraint_violation / run["residual_iqr"]
        worst = max(worst, ratio)
        assert ratio <= 5e-2, f"violation ratio {ratio:.4g}"
        checked += 1
    _, pred, residuals, _ = limit_fits["data"]
    iqr = float(np.subtract(*np.percentile(residuals, [75, 25])))
    for key in ("trainset", "operator"):
        spec, bp, report = limit_fits[key]
        if not report.converged:
            continue
        from ksos.solver import kkt_check

        violation, _ = kkt_check(bp, spec)
        ratio = violation / iqr
        worst = max(worst, ratio)
        assert ratio <= 5e-2, f"{key} limit fit violation ratio {ratio:.4g}"
        checked += 1
    assert checked >= N_SEEDS
    print(f"criterion 2: PASS ({checked} converged fits, worst violation ratio {worst:.2e})")


def _feasible_points_for(spec, kind, count, seed):
    rng = np.random.default_rng(seed)
    n = spec.n
    b_over_n = spec.b / n
    V_low, V_up = spec.km_low.gf.V, spec.km_up.gf.V

    def margins_ok(gl, gu, coupling):
        mats = []
        if kind == "operator":
            W = coupling
            mats.append(((V_low * (gl - b_over_n)) @ V_low.T - W, spec.reg_low.lam1, False))
            mats.append(((V_up * (gu - b_over_n)) @ V_up.T + W, spec.reg_up.lam1, False))
            mats.append((W, spec.penalty.lam1, True))
        elif kind == "trainset":
            a0 = coupling
            mats.append(((V_low * (gl + a0 - b_over_n)) @ V_low.T, spec.reg_low.lam1, False))
            mats.append(((V_up * (gu - a0 - b_over_n)) @ V_up.T, spec.reg_up.lam1, False))
        else:
            mats.append(((V_low * (gl - b_over_n)) @ V_low.T, spec.reg_low.lam1, False))
            mats.append(((V_up * (gu - b_over_n)) @ V_up.T, spec.reg_up.lam1, False))
        for M, lam1, two_sided in mats:
            eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
            thresholds = (lam1, -lam1) if two_sided else (lam1,)
            if min(abs(e - t) for e in eigs for t in thresholds) < 1e-3:
                return False
        return True

    points = []
    while len(points) < count:
        gl = rng.uniform(0.05, 1.5, n)
        gu = rng.uniform(0.05, 1.5, n)
        if kind == "operator":
            W = rng.standard_normal((n, n))
            coupling = 0.5 * (W + W.T)
        elif kind == "trainset":
            coupling = rng.uniform(-0.8, 0.8, n)
        else:
            coupling = None
        if margins_ok(gl, gu, coupling):
            points.append((gl, gu, coupling))
    return points


def test_criterion_3_gradient_correctness():
    start = time.time()
    n = 4
    case = SyntheticCase(1)
    ds = generate(case, n, seed=1)
    pred_vals = np.zeros(n)
    residuals = ds.y - pred_vals
    km = kernel_model(ds.X, KernelSpec(0.5))
    base = dict(
        residuals=residuals,
        km_low=km,
        km_up=km,
        b=0.7,
        reg_low=RegParams(0.3, 1.0),
        reg_up=RegParams(0.3, 1.0),
    )
    worst = 0.0

    def check(analytic, fd):
        nonlocal worst
        denom = np.maximum(np.abs(fd), 1e-3)
        rel = float(np.max(np.abs(analytic - fd) / denom))
        worst = max(worst, rel)
        assert rel <= 1e-5, f"gradient mismatch {rel:.3g}"

    spec = ProblemSpec(**base)
    for side in ("low", "up"):
        for gl, gu, _ in _feasible_points_for(spec, "asym", 10, seed=11):
            g = gl if side == "low" else gu
            check(asym_dual(g, side, spec)[1], fd_gradient(lambda v: asym_dual(v, side, spec)[0], g))

    spec_op = ProblemSpec(**base, penalty=OperatorPenalty(0.4, 1.0))
    for gl, gu, W in _feasible_points_for(spec_op, "operator", 10, seed=12):
        x = np.concatenate([gl, gu, W.ravel()])

        def fn_op(v):
            return operator_dual(v[:n], v[n : 2 * n], v[2 * n :].reshape(n, n), spec_op)[0]

        _, g_low, g_up, g_W = operator_dual(gl, gu, W, spec_op)
        check(np.concatenate([g_low, g_up, g_W.ravel()]), fd_gradient(fn_op, x))

    spec_ts = ProblemSpec(**base, penalty=TrainSetPenalty(0.6))
    for gl, gu, a0 in _feasible_points_for(spec_ts, "trainset", 10, seed=13):
        x = np.concatenate([gl, gu, a0])

        def fn_ts(v):
            return trainset_dual(v[:n], v[n : 2 * n], v[2 * n :], spec_ts)[0]

        _, g_low, g_up, g_a = trainset_dual(gl, gu, a0, spec_ts)
        check(np.concatenate([g_low, g_up, g_a]), fd_gradient(fn_ts, x))

    print(
        f"criterion 3: PASS (30 feasible points, worst relative error {worst:.2e}, "
        f"{time.time() - start:.1f}s)"
    )


def test_criterion_4_strong_duality_and_recovery():
    km = kernel_model(np.array([[0.0]]), KernelSpec(1.0))
    scalar = ProblemSpec(
        residuals=np.array([2.0]),
        km_low=km,
        km_up=km,
        b=0.0,
        reg_low=RegParams(0.0, 1.0),
        reg_up=RegParams(0.0, 1.0),
    )
    ds, report = solve(scalar)
    bp = recover_band_pair(ds, scalar)
    assert bp.A_up[0, 0] == pytest.approx(2.0, abs=1e-2)
    assert report.objective == pytest.approx(4.0, abs=1e-2)
    gap_scalar = abs(primal_value(bp, scalar) - report.objective) / (1 + abs(report.objective))
    assert gap_scalar <= 1e-2

    worst_gap, worst_brute = gap_scalar, 0.0
    settings = SolverSettings(tol=1e-6)
    case = SyntheticCase(1)
    for n, seed, penalty in (
        (2, 21, None),
        (3, 22, None),
        (2, 23, TrainSetPenalty(0.5)),
        (3, 24, TrainSetPenalty(1.0)),
        (3, 25, OperatorPenalty(0.0, 0.8)),
    ):
        data = generate(case, n, seed=seed)
        km_n = kernel_model(data.X, KernelSpec(0.6))
        spec = ProblemSpec(
            residuals=data.y - np.mean(data.y),
            km_low=km_n,
            km_up=km_n,
            b=0.4,
            reg_low=RegParams(0.0, 1.0),
            reg_up=RegParams(0.0, 1.0),
            penalty=penalty,
        )
        ds_n, rep_n = solve(spec, settings=settings)
        bp_n = recover_band_pair(ds_n, spec)
        gap = abs(primal_value(bp_n, spec) - rep_n.objective) / (1 + abs(rep_n.objective))
        worst_gap = max(worst_gap, gap)
        assert gap <= 1e-2, f"duality gap {gap:.3g} at n={n}"
        brute = primal_brute(spec, n_starts=6, seed=seed)
        rel = abs(brute - rep_n.objective) / max(abs(rep_n.objective), 1e-8)
        worst_brute = max(worst_brute, rel)
        assert rel <= 0.01, f"brute-force mismatch {rel:.3g} at n={n}"
    print(
        f"criterion 4: PASS (scalar fixture exact, worst gap {worst_gap:.2e}, "
        f"worst brute-force mismatch {worst_brute:.2e})"
    )


def test_criterion_5_penalty_limits_and_gap_bounds(pipeline_runs, limit_fits):
    spec_ts, bp_ts, _ = limit_fits["trainset"]
    f_low = band_values_on_train(bp_ts.A_low, spec_ts.km_low)
    f_up = band_values_on_train(bp_ts.A_up, spec_ts.km_up)
    sym_ratio = float(np.sum((f_low - f_up) ** 2) / np.sum(f_up**2))
    assert sym_ratio <= 1e-3, f"training-set symmetry ratio {sym_ratio:.3g}"

    spec_op, bp_op, _ = limit_fits["operator"]
    op_ratio = nuclear_norm(bp_op.A_low - bp_op.A_up) / nuclear_norm(bp_op.A_up)
    assert op_ratio <= 1e-3, f"operator symmetry ratio {op_ratio:.3g}"

    checked = 0
    for run in pipeline_runs:
        bm = run["band_model"]
        bound_op, observed_op = gap_bound_operator(bm)
        assert observed_op <= bound_op
        bound_ts, observed_ts = gap_bound_trainset(bm)
        assert observed_ts <= bound_ts
        checked += 1
    print(
        f"criterion 5: PASS (symmetry ratios {sym_ratio:.2e}/{op_ratio:.2e}, "
        f"sup-gap bounds hold on {checked} trained models)"
    )


def test_criterion_6_hsic_estimator_equivalence():
    from ksos.tuning import hsic

    rng = np.random.default_rng(30)
    worst = 0.0
    for n in (5, 10, 20, 35, 50):
        for _ in range(3):
            u = rng.standard_normal(n)
            v = 0.4 * u + rng.standard_normal(n)
            dev = abs(hsic(u, v) - hsic_brute(u, v))
            worst = max(worst, dev)
            assert dev <= 1e-12, f"estimator deviation {dev:.3g} at n={n}"
    assert hsic(np.full(30, 3.14), rng.standard_normal(30)) == 0.0
    print(f"criterion 6: PASS (worst deviation {worst:.2e}, constant input exactly 0)")


def test_criterion_7_kruskal_wallis_permutation():
    h, _ = kruskal_wallis_perm([[1, 2, 3], [4, 5, 6]], n_perm=2000, seed=0)
    assert h == pytest.approx(27.0 / 7.0, abs=1e-3)

    rng = np.random.default_rng(31)
    groups = [rng.normal(shift, 0.01, size=10) for shift in (0.0, 5.0, 10.0)]
    _, p_sep = kruskal_wallis_perm(groups, n_perm=2000, seed=1)
    assert p_sep <= 0.01

    hits = 0
    sims = 200
    for i in range(sims):
        null_groups = [rng.standard_normal(6) for _ in range(3)]
        _, p = kruskal_wallis_perm(null_groups, n_perm=400, seed=1000 + i)
        hits += p <= 0.05
    frac = hits / sims
    assert 0.01 <= frac <= 0.10, f"null rejection rate {frac:.3f}"
    print(
        f"criterion 7: PASS (hand case H=27/7, separated p={p_sep:.4g}, "
        f"null rejection rate {frac:.3f})"
    )


def test_criterion_8_warm_start_savings(pipeline_runs):
    start = time.time()
    case = SyntheticCase(1)
    ds = generate(case, 3100, seed=0)
    pre, _, _ = split(ds, SplitPlan(100, 2000, 1000, seed=0))
    pred = fit_kernel_ridge(pre.X, pre.y)
    norm = normalize_hyperparameters(pre.X, pre.y, pred, 10.0)
    km = kernel_model(pre.X, KernelSpec(norm.theta_init))
    spec = ProblemSpec(
        residuals=pre.y - predict(pred, pre.X),
        km_low=km,
        km_up=km,
        b=norm.b_scaled,
        reg_low=norm.reg_low,
        reg_up=norm.reg_up,
        penalty=TrainSetPenalty(1.0),
    )
    grid = np.geomspace(1e-4, 1e4, 10)
    warm = warm_start_sweep(spec, grid, warm=True)
    cold = warm_start_sweep(spec, grid, warm=False)
    warm_total = sum(rep.iterations for _, _, rep in warm)
    cold_total = sum(rep.iterations for _, _, rep in cold)
    elapsed = time.time() - start
    assert elapsed <= 10 * 60, f"runtime {elapsed:.0f}s exceeds 10 min"
    ratio = warm_total / cold_total
    assert ratio <= 0.70, f"warm/cold iteration ratio {ratio:.3f}"
    print(
        f"criterion 8: PASS (warm {warm_total} vs cold {cold_total} iterations, "
        f"ratio {ratio:.3f}, {elapsed:.0f}s)"
    )


def _tune_one(args):
    case_id, seed, cfg = args
    ds = generate(SyntheticCase(case_id), 100, seed=seed)
    pred = fit_kernel_ridge(ds.X, ds.y)
    return tune(ds.X, ds.y, pred, cfg, seed=seed)


def test_criterion_9_asymmetry_detection():
    start = time.time()
    lam_grid = tuple(np.geomspace(1e-4, 1e4, 4))
    cfg = TuneConfig(
        theta_points=4,
        theta_span=4.0,
        lambda_grid=lam_grid,
        folds=3,
        hsic_replicates=5,
        kw_permutations=500,
        b=10.0,
        asym_refine=False,
    )
    with ThreadPoolExecutor(max_workers=2) as pool:
        case3 = list(pool.map(_tune_one, [(3, s, cfg) for s in range(N_SEEDS)]))
        case6 = list(pool.map(_tune_one, [(6, s, cfg) for s in range(N_SEEDS)]))

    lower_half = set(sorted(lam_grid)[: len(lam_grid) // 2])
    n_lower = sum(r.lam_pen in lower_half and r.fallback is None for r in case3)
    n_fallback = sum(r.fallback in ("symmetric", "homoscedastic") for r in case6)
    elapsed = time.time() - start
    assert n_lower > N_SEEDS / 2, f"case 3 picked low penalties in only {n_lower}/{N_SEEDS} seeds"
    assert n_fallback > N_SEEDS / 2, f"case 6 fell back in only {n_fallback}/{N_SEEDS} seeds"
    print(
        f"criterion 9: PASS (case 3 low-penalty {n_lower}/{N_SEEDS}, "
        f"case 6 fallback {n_fallback}/{N_SEEDS}, {elapsed:.0f}s)"
    )


def test_criterion_10_conformal_quantile_oracle():
    rng = np.random.default_rng(32)
    for _ in range(1000):
        m = int(rng.integers(1, 120))
        alpha = float(rng.uniform(0.01, 0.8))
        scores = rng.standard_normal(m)
        k = int(np.ceil((1 - alpha) * (m + 1)))
        expected = float("inf") if k > m else float(np.sort(scores)[k - 1])
        assert conformal_quantile(scores, alpha) == expected
    print("criterion 10: PASS (1000 random score sets match the order-statistic oracle exactly)")
