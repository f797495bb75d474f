"""Hyperparameter selection driven by a dependence criterion.

Lengthscales and the symmetry-penalty weight are chosen to maximize the HSIC
between out-of-fold centered residual magnitudes and band widths: stronger
dependence means more adaptive bands. A permutation Kruskal-Wallis test
decides whether HSIC differences across penalty weights are real (otherwise
the most symmetric model wins), and a permutation independence test on the
winner can demote the model to a homoscedastic one with a huge lengthscale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .bands import BandModel, eval_band, fit_band_model
from .errors import NumericalError, ParameterError
from .predictor import Predictor, median_heuristic, predict
from .rng import stream
from .solver import (
    OperatorPenalty,
    ProblemSpec,
    SolverSettings,
    TrainSetPenalty,
    recover_band_pair,
    solve,
)
from .spectral import KernelSpec, RegParams, kernel_model, nuclear_norm

logger = logging.getLogger(__name__)

EPS_NORM = 1e-8
HOMOSCEDASTIC_DIAMETER_FACTOR = 1e3


@dataclass(frozen=True)
class TuneConfig:
    theta_grid: tuple | None = None  # explicit grid; None -> median heuristic band
    theta_points: int = 8
    theta_span: float = 10.0  # grid covers median/span .. median*span
    lambda_grid: tuple = tuple(np.geomspace(1e-4, 1e4, 10))
    folds: int = 5
    hsic_replicates: int = 20
    kw_permutations: int = 2000
    significance: float = 0.05
    b: float = 10.0
    penalty_kind: str = "trainset"  # or "operator"
    asym_refine: bool = True
    full_2d_search: bool = False
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if len(self.lambda_grid) == 0:
            raise ParameterError("lambda grid must be nonempty")
        if self.kw_permutations < 100:
            raise ParameterError("need at least 100 permutations")
        if self.penalty_kind not in ("trainset", "operator"):
            raise ParameterError(f"unknown penalty kind {self.penalty_kind!r}")
        if self.folds < 2:
            raise ParameterError("need at least two folds")


@dataclass(frozen=True)
class NormalizationRecord:
    """Weights that make each objective term O(1) at a reference solution."""

    theta_init: float
    b_user: float
    b_scaled: float
    reg_low: RegParams
    reg_up: RegParams
    mean_width0: float
    nuclear0: tuple
    frobenius0: tuple
    unnormalized: bool = False


@dataclass
class TuneResult:
    theta_low: float
    theta_up: float
    lam_pen: float
    fallback: str | None
    table: list
    groups: dict
    kw_h: float | None
    kw_p: float | None
    independence_p: float | None
    iterations_per_lambda: list
    total_iterations: int
    failed_folds: int
    normalization: NormalizationRecord | None = None

    def to_dict(self) -> dict:
        return {
            "theta_low": self.theta_low,
            "theta_up": self.theta_up,
            "lambda_pen": self.lam_pen,
            "fallback": self.fallback,
            "table": self.table,
            "groups": {str(k): list(map(float, v)) for k, v in self.groups.items()},
            "kw_h": self.kw_h,
            "kw_p": self.kw_p,
            "independence_p": self.independence_p,
            "iterations_per_lambda": self.iterations_per_lambda,
            "total_iterations": self.total_iterations,
            "failed_folds": self.failed_folds,
        }


def _energy_gram(v: np.ndarray) -> np.ndarray:
    a = np.abs(v)
    return a[:, None] + a[None, :] - np.abs(v[:, None] - v[None, :])


def _center(K: np.ndarray) -> np.ndarray:
    row = K.mean(axis=0, keepdims=True)
    col = K.mean(axis=1, keepdims=True)
    return K - row - col + K.mean()


def hsic(u, v) -> float:
    """Biased HSIC V-statistic with the energy-distance kernel; >= 0."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    n = u.size
    if v.size != n:
        raise ParameterError("samples must have equal length")
    if n < 4:
        raise ParameterError("HSIC needs at least 4 paired samples")
    # centering both Grams keeps the estimator exactly symmetric in (u, v)
    value = float(np.sum(_center(_energy_gram(u)) * _center(_energy_gram(v)))) / n**2
    return max(value, 0.0)


def hsic_permutation_pvalue(u, v, n_perm: int = 2000, seed: int = 0) -> float:
    """Permutation p-value for HSIC = 0 (shuffling v breaks the pairing)."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    n = u.size
    Ku_c = _center(_energy_gram(u))
    Kv = _energy_gram(v)
    observed = max(float(np.sum(Ku_c * Kv)) / n**2, 0.0)
    rng = stream(seed, "perm")
    count = 0
    for _ in range(n_perm):
        p = rng.permutation(n)
        val = max(float(np.sum(Ku_c * Kv[np.ix_(p, p)])) / n**2, 0.0)
        if val >= observed:
            count += 1
    return (1 + count) / (n_perm + 1)


def independence_fallback(
    u, v, n_perm: int = 2000, seed: int = 0, significance: float = 0.05
) -> bool:
    """True when the HSIC independence test cannot reject, i.e. fall back to
    the homoscedastic model."""
    return hsic_permutation_pvalue(u, v, n_perm, seed) >= significance


def _kw_statistic(ranks: np.ndarray, sizes: list) -> float:
    N = ranks.size
    h = 0.0
    start = 0
    for n_g in sizes:
        r_mean = float(np.mean(ranks[start : start + n_g]))
        h += n_g * (r_mean - (N + 1) / 2.0) ** 2
        start += n_g
    return 12.0 / (N * (N + 1)) * h


def kruskal_wallis_perm(groups, n_perm: int = 2000, seed: int = 0) -> tuple[float, float]:
    """Kruskal-Wallis H with mid-rank ties and a label-permutation p-value."""
    groups = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(groups) < 2 or any(g.size < 2 for g in groups):
        raise ParameterError("need at least two groups of at least two values")
    sizes = [g.size for g in groups]
    pooled = np.concatenate(groups)
    ranks = rankdata(pooled)
    h_obs = _kw_statistic(ranks, sizes)
    rng = stream(seed, "perm")
    count = 0
    for _ in range(n_perm):
        if _kw_statistic(rng.permutation(ranks), sizes) >= h_obs:
            count += 1
    return h_obs, (1 + count) / (n_perm + 1)


def normalize_hyperparameters(
    X,
    y,
    predictor: Predictor,
    b_user: float,
    settings: SolverSettings | None = None,
) -> NormalizationRecord:
    """Fit a reference unpenalized model at the median-heuristic lengthscale
    with unit weights, then rescale so each objective term is O(1) there."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    theta0 = median_heuristic(X)
    try:
        bm, _ = fit_band_model(
            X,
            y,
            predictor,
            theta_low=theta0,
            theta_up=theta0,
            b=b_user,
            reg_low=RegParams(1.0, 1.0),
            reg_up=RegParams(1.0, 1.0),
            penalty=None,
            settings=settings,
        )
    except NumericalError:
        logger.warning("reference solve failed; keeping unnormalized weights")
        return NormalizationRecord(
            theta_init=theta0,
            b_user=b_user,
            b_scaled=b_user,
            reg_low=RegParams(1.0, 1.0),
            reg_up=RegParams(1.0, 1.0),
            mean_width0=float("nan"),
            nuclear0=(float("nan"), float("nan")),
            frobenius0=(float("nan"), float("nan")),
            unnormalized=True,
        )
    f_low = eval_band(bm, "low", X)
    f_up = eval_band(bm, "up", X)
    mw0 = float(np.mean(f_low + f_up))
    nuc = (nuclear_norm(bm.pair.A_low), nuclear_norm(bm.pair.A_up))
    fro = (float(np.sum(bm.pair.A_low**2)), float(np.sum(bm.pair.A_up**2)))
    return NormalizationRecord(
        theta_init=theta0,
        b_user=b_user,
        b_scaled=b_user / max(mw0, EPS_NORM),
        reg_low=RegParams(1.0 / max(nuc[0], EPS_NORM), 1.0 / max(fro[0], EPS_NORM)),
        reg_up=RegParams(1.0 / max(nuc[1], EPS_NORM), 1.0 / max(fro[1], EPS_NORM)),
        mean_width0=mw0,
        nuclear0=nuc,
        frobenius0=fro,
    )


def _make_penalty(kind: str, lam: float):
    return TrainSetPenalty(lam) if kind == "trainset" else OperatorPenalty(lam, lam)


def fold_assignment(n: int, folds: int, seed: int, index: int = 0) -> np.ndarray:
    """Balanced random fold labels in 0..folds-1."""
    purpose = "folds" if index == 0 else "bootstrap"
    perm = stream(seed, purpose, index).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[perm] = np.arange(n) % folds
    return labels


def cv_hsic(
    theta_low: float,
    theta_up: float,
    lam_pen: float,
    X,
    y,
    predictor: Predictor,
    cfg: TuneConfig,
    norm: NormalizationRecord | None = None,
    assignment: np.ndarray | None = None,
    seed: int = 0,
    warm_cache: dict | None = None,
    iteration_sink: list | None = None,
) -> float:
    """Pooled out-of-fold HSIC between widths and centered residual magnitudes.

    Folds whose solve fails numerically are skipped (and counted in
    iteration_sink's companion flag); more than half failing is an error.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if n < 2 * cfg.folds:
        raise ParameterError("pre-training set too small for the fold count")
    if norm is None:
        norm = normalize_hyperparameters(X, y, predictor, cfg.b, cfg.solver)
    if assignment is None:
        assignment = fold_assignment(n, cfg.folds, seed)
    m_all = predict(predictor, X)

    widths, resids = [], []
    failed = 0
    for k in range(cfg.folds):
        test = assignment == k
        train = ~test
        cache_key = k
        init = warm_cache.get(cache_key) if warm_cache is not None else None
        try:
            bm, report, ds = _fit_fold(
                X[train], y[train], predictor, theta_low, theta_up, lam_pen, cfg, norm, init
            )
        except NumericalError:
            failed += 1
            continue
        if warm_cache is not None:
            warm_cache[cache_key] = ds
        if iteration_sink is not None:
            iteration_sink.append(report.iterations)
        f_low = eval_band(bm, "low", X[test])
        f_up = eval_band(bm, "up", X[test])
        widths.append(f_up + f_low)
        resids.append(np.abs(y[test] - m_all[test] - (f_up - f_low) / 2.0))
    if failed > cfg.folds // 2:
        raise NumericalError(f"{failed} of {cfg.folds} folds failed to solve")
    return hsic(np.concatenate(widths), np.concatenate(resids))


def _fit_fold(X, y, predictor, theta_low, theta_up, lam_pen, cfg, norm, init):
    residuals = y - predict(predictor, X)
    km_low = kernel_model(X, KernelSpec(float(theta_low)))
    km_up = km_low if theta_up == theta_low else kernel_model(X, KernelSpec(float(theta_up)))
    spec = ProblemSpec(
        residuals=residuals,
        km_low=km_low,
        km_up=km_up,
        b=norm.b_scaled,
        reg_low=norm.reg_low,
        reg_up=norm.reg_up,
        penalty=_make_penalty(cfg.penalty_kind, lam_pen),
    )
    ds, report = solve(spec, init=init, settings=cfg.solver)
    bp = recover_band_pair(ds, spec)
    bm = BandModel(pair=bp, predictor=predictor, km_low=km_low, km_up=km_up, normalization=norm)
    return bm, report, ds


def _theta_grid(cfg: TuneConfig, X) -> np.ndarray:
    if cfg.theta_grid is not None:
        return np.asarray(cfg.theta_grid, dtype=float)
    med = median_heuristic(X)
    return np.geomspace(med / cfg.theta_span, med * cfg.theta_span, cfg.theta_points)


def _data_diameter(X: np.ndarray) -> float:
    span = X.max(axis=0) - X.min(axis=0)
    return float(max(np.linalg.norm(span), 1e-3))


def tune(X, y, predictor: Predictor, cfg: TuneConfig | None = None, seed: int = 0) -> TuneResult:
    """Select (theta_low, theta_up, lambda_pen) by cross-validated HSIC.

    Ascending penalty sweep with warm starts; per-penalty lengthscale search
    (shared grid plus a one-step asymmetric refinement for the training-set
    penalty); Kruskal-Wallis permutation test across penalties on replicate
    HSIC values from resampled fold assignments; independence fallback on the
    winner.
    """
    cfg = cfg or TuneConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    norm = normalize_hyperparameters(X, y, predictor, cfg.b, cfg.solver)
    thetas = _theta_grid(cfg, X)
    lam_grid = np.sort(np.asarray(cfg.lambda_grid, dtype=float))
    base_assignment = fold_assignment(X.shape[0], cfg.folds, seed)

    # warm-start caches survive across the ascending lambda sweep
    search_caches: dict = {}
    replicate_caches: dict = {}
    table = []
    groups: dict = {}
    iterations_per_lambda = []
    failed_total = 0

    def eval_point(tl, tu, lam, cache_key, assignment, sink):
        cache = search_caches.setdefault(cache_key, {}) if cache_key else None
        try:
            return cv_hsic(
                tl,
                tu,
                lam,
                X,
                y,
                predictor,
                cfg,
                norm=norm,
                assignment=assignment,
                seed=seed,
                warm_cache=cache,
                iteration_sink=sink,
            )
        except NumericalError:
            logger.warning("grid point (%.4g, %.4g, %.4g) failed", tl, tu, lam)
            return None

    for lam in lam_grid:
        sink: list = []
        scored = []
        for ti, theta in enumerate(thetas):
            val = eval_point(theta, theta, lam, ("shared", ti), base_assignment, sink)
            if val is not None:
                scored.append((val, theta, theta))
            else:
                failed_total += 1
        if not scored:
            raise NumericalError(f"all lengthscales failed at penalty {lam:g}")
        scored.sort(key=lambda t: t[0])
        best_val, best_tl, best_tu = scored[-1]

        if cfg.penalty_kind == "trainset" and len(thetas) > 1:
            ti = int(np.argmin(np.abs(thetas - best_tl)))
            candidates = []
            if cfg.full_2d_search:
                candidates = [(a, b) for a in thetas for b in thetas if a != b]
            elif cfg.asym_refine:
                for delta in (-1, 1):
                    tj = ti + delta
                    if 0 <= tj < len(thetas):
                        candidates.append((thetas[tj], thetas[ti]))
                        candidates.append((thetas[ti], thetas[tj]))
            for tl, tu in candidates:
                val = eval_point(tl, tu, lam, None, base_assignment, sink)
                if val is not None and val > best_val:
                    best_val, best_tl, best_tu = val, tl, tu

        reps = []
        for r in range(cfg.hsic_replicates):
            assignment = fold_assignment(X.shape[0], cfg.folds, seed, index=r + 1)
            cache = replicate_caches.setdefault(r, {})
            try:
                reps.append(
                    cv_hsic(
                        best_tl,
                        best_tu,
                        lam,
                        X,
                        y,
                        predictor,
                        cfg,
                        norm=norm,
                        assignment=assignment,
                        seed=seed,
                        warm_cache=cache,
                        iteration_sink=sink,
                    )
                )
            except NumericalError:
                failed_total += 1
        groups[float(lam)] = reps
        table.append(
            {
                "lambda_pen": float(lam),
                "theta_low": float(best_tl),
                "theta_up": float(best_tu),
                "hsic": float(best_val),
            }
        )
        iterations_per_lambda.append(int(sum(sink)))

    kw_h = kw_p = None
    usable = [lam for lam in groups if len(groups[lam]) >= 2]
    if len(lam_grid) > 1 and len(usable) == len(lam_grid):
        kw_h, kw_p = kruskal_wallis_perm(
            [groups[float(lam)] for lam in lam_grid], cfg.kw_permutations, seed
        )

    if kw_p is not None and kw_p < cfg.significance:
        best_row = max(table, key=lambda row: row["hsic"])
        fallback = None
    else:
        best_row = table[-1]  # largest penalty: the most symmetric model
        fallback = "symmetric" if len(lam_grid) > 1 else None

    # independence test on the winning configuration's pooled sample
    win_cache: dict = {}
    sink2: list = []
    independence_p = None
    try:
        pooled = _pooled_sample(
            best_row["theta_low"],
            best_row["theta_up"],
            best_row["lambda_pen"],
            X,
            y,
            predictor,
            cfg,
            norm,
            base_assignment,
            win_cache,
            sink2,
        )
        independence_p = hsic_permutation_pvalue(
            pooled[0], pooled[1], cfg.kw_permutations, seed
        )
    except NumericalError:
        logger.warning("independence check failed; keeping selected model")

    theta_low = best_row["theta_low"]
    theta_up = best_row["theta_up"]
    if independence_p is not None and independence_p >= cfg.significance:
        fallback = "homoscedastic"
        theta_low = theta_up = HOMOSCEDASTIC_DIAMETER_FACTOR * _data_diameter(X)

    return TuneResult(
        theta_low=float(theta_low),
        theta_up=float(theta_up),
        lam_pen=float(best_row["lambda_pen"]),
        fallback=fallback,
        table=table,
        groups=groups,
        kw_h=kw_h,
        kw_p=kw_p,
        independence_p=independence_p,
        iterations_per_lambda=iterations_per_lambda,
        total_iterations=int(sum(iterations_per_lambda) + sum(sink2)),
        failed_folds=failed_total,
        normalization=norm,
    )


def _pooled_sample(
    theta_low, theta_up, lam, X, y, predictor, cfg, norm, assignment, cache, sink
):
    """Out-of-fold (widths, centered residual magnitudes) for one config."""
    m_all = predict(predictor, X)
    widths, resids = [], []
    failed = 0
    for k in range(cfg.folds):
        test = assignment == k
        train = ~test
        try:
            bm, report, ds = _fit_fold(
                X[train], y[train], predictor, theta_low, theta_up, lam, cfg, norm, cache.get(k)
            )
        except NumericalError:
            failed += 1
            continue
        cache[k] = ds
        sink.append(report.iterations)
        f_low = eval_band(bm, "low", X[test])
        f_up = eval_band(bm, "up", X[test])
        widths.append(f_up + f_low)
        resids.append(np.abs(y[test] - m_all[test] - (f_up - f_low) / 2.0))
    if failed > cfg.folds // 2:
        raise NumericalError("winning configuration failed to refit")
    return np.concatenate(widths), np.concatenate(resids)
