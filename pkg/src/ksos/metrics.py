"""Interval quality metrics: mean width, absolute coverage gap, worst-set
coverage, each with lower/upper variants where that makes sense."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import coverage
from .datasets import SyntheticCase, conditional_sample
from .errors import ParameterError
from .rng import stream


@dataclass
class MetricsReport:
    mean_width: float
    n_infinite: int
    marginal_coverage: float
    wsc: float
    wsc_low: float
    wsc_up: float
    region_count: int
    region_size: int
    acg: float | None = None
    acg_low: float | None = None
    acg_up: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def mean_width(intervals_arr) -> tuple[float, int]:
    """Average width of the finite intervals, plus the count of infinite ones.

    Empty markers (nan) count as zero-width degenerate misses and are
    excluded the same way infinite ones are.
    """
    iv = np.asarray(intervals_arr, dtype=float)
    widths = iv[:, 1] - iv[:, 0]
    finite = np.isfinite(widths)
    n_bad = int(np.sum(~finite))
    if not np.any(finite):
        raise ParameterError("no finite intervals to average")
    return float(np.mean(widths[finite])), n_bad


def acg_from_intervals(
    interval_fn,
    case: SyntheticCase,
    alpha: float,
    n_x: int = 100,
    n_y: int = 1000,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Absolute coverage gap (central, lower, upper) by conditional sampling.

    interval_fn maps an (n, d) array of probe locations to an (n, 2) array of
    intervals.
    """
    from .datasets import _sample_inputs  # same input law as the generator

    rng = stream(seed, "probe")
    X_probe = _sample_inputs(case, n_x, rng)
    iv = np.asarray(interval_fn(X_probe), dtype=float)
    gaps, gaps_low, gaps_up = [], [], []
    for i in range(n_x):
        draws = conditional_sample(case, X_probe[i], n_y, seed=seed * n_x + i + 1)
        lo, hi = iv[i]
        if np.isnan(lo) or np.isnan(hi):
            p = p_low = p_up = 0.0
        else:
            p = float(np.mean((lo <= draws) & (draws <= hi)))
            p_low = float(np.mean(draws >= lo))
            p_up = float(np.mean(draws <= hi))
        gaps.append(abs(p - (1 - alpha)))
        gaps_low.append(abs(p_low - (1 - alpha / 2)))
        gaps_up.append(abs(p_up - (1 - alpha / 2)))
    return float(np.mean(gaps)), float(np.mean(gaps_low)), float(np.mean(gaps_up))


def acg(
    bm,
    cal,
    case: SyntheticCase,
    alpha: float,
    n_x: int = 100,
    n_y: int = 1000,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Absolute coverage gap of a calibrated band model."""
    from .conformal import intervals as build_intervals

    return acg_from_intervals(
        lambda Xp: build_intervals(bm, cal, Xp), case, alpha, n_x, n_y, seed
    )


def wsc(
    intervals_arr,
    y_test,
    X_test,
    region_count: int = 10,
    region_size: int = 100,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Worst coverage (central, lower, upper) over random nearest-neighbor
    regions of the test set; features are z-scored before distances."""
    iv = np.asarray(intervals_arr, dtype=float)
    y = np.asarray(y_test, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X_test, dtype=float))
    n = y.size
    if iv.shape[0] != n or X.shape[0] != n:
        raise ParameterError("intervals, labels and inputs differ in length")
    if region_size > n:
        region_size = n
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    rng = stream(seed, "regions")
    centers = rng.choice(n, size=min(region_count, n), replace=False)

    with np.errstate(invalid="ignore"):
        inside = (iv[:, 0] <= y) & (y <= iv[:, 1])
        above = np.where(np.isnan(iv[:, 0]), False, iv[:, 0] <= y)
        below = np.where(np.isnan(iv[:, 1]), False, y <= iv[:, 1])

    worst = worst_low = worst_up = 1.0
    for c in centers:
        d = np.linalg.norm(Z - Z[c], axis=1)
        # stable argsort breaks distance ties by index order
        region = np.argsort(d, kind="stable")[:region_size]
        worst = min(worst, float(np.mean(inside[region])))
        worst_low = min(worst_low, float(np.mean(above[region])))
        worst_up = min(worst_up, float(np.mean(below[region])))
    return worst, worst_low, worst_up


def evaluate_intervals(
    intervals_arr,
    y_test,
    X_test,
    alpha: float,
    case: SyntheticCase | None = None,
    interval_fn=None,
    n_x: int = 100,
    n_y: int = 1000,
    region_count: int = 10,
    region_size: int = 100,
    seed: int = 0,
) -> MetricsReport:
    """Assemble the full metric report for one set of test intervals."""
    mw, n_inf = mean_width(intervals_arr)
    cov = coverage(intervals_arr, y_test)
    w, w_low, w_up = wsc(intervals_arr, y_test, X_test, region_count, region_size, seed)
    report = MetricsReport(
        mean_width=mw,
        n_infinite=n_inf,
        marginal_coverage=cov,
        wsc=w,
        wsc_low=w_low,
        wsc_up=w_up,
        region_count=region_count,
        region_size=min(region_size, len(y_test)),
    )
    if case is not None and interval_fn is not None:
        report.acg, report.acg_low, report.acg_up = acg_from_intervals(
            interval_fn, case, alpha, n_x, n_y, seed
        )
    return report
