"""Split-conformal calibration and interval construction.

Calibration turns raw band shapes into intervals with a finite-sample
marginal coverage guarantee. Intervals are closed; a calibration set too
small for the adjusted quantile yields +inf (the whole line), and an interval
whose endpoints cross is kept as an empty marker that never covers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bands import BandModel, eval_band, scores
from .errors import ParameterError
from .predictor import predict


@dataclass(frozen=True)
class CalibrationResult:
    mode: str  # "symmetric" or "asymmetric"
    alpha: float
    m: int
    q: float | None = None
    q_low: float | None = None
    q_up: float | None = None
    alpha_low: float | None = None
    alpha_up: float | None = None

    @property
    def infinite(self) -> bool:
        vals = [v for v in (self.q, self.q_low, self.q_up) if v is not None]
        return any(np.isinf(v) for v in vals)


def conformal_quantile(scores_arr, alpha: float) -> float:
    """k-th smallest score with k = ceil((1 - alpha)(m + 1)); +inf if k > m."""
    s = np.asarray(scores_arr, dtype=float).ravel()
    m = s.size
    if m == 0:
        raise ParameterError("cannot take a conformal quantile of no scores")
    if not (0.0 < alpha < 1.0):
        raise ParameterError("alpha must lie in (0, 1)")
    k = int(np.ceil((1.0 - alpha) * (m + 1)))
    if k > m:
        return float("inf")
    return float(np.partition(s, k - 1)[k - 1])


def calibrate(
    bm: BandModel, X_cal, y_cal, alpha: float, mode: str = "symmetric"
) -> CalibrationResult:
    """Conformal quantile(s) of the calibration scores.

    Symmetric mode calibrates the max-score; asymmetric mode calibrates each
    side at alpha/2 so coverage holds separately below and above.
    """
    X_cal = np.atleast_2d(np.asarray(X_cal, dtype=float))
    y_cal = np.asarray(y_cal, dtype=float).ravel()
    if X_cal.shape[0] != y_cal.shape[0]:
        raise ParameterError("calibration inputs and labels differ in length")
    m = y_cal.shape[0]
    if mode == "symmetric":
        q = conformal_quantile(scores(bm, X_cal, y_cal), alpha)
        return CalibrationResult(mode="symmetric", alpha=alpha, m=m, q=q)
    if mode == "asymmetric":
        pred = predict(bm.predictor, X_cal)
        lo_band = pred - eval_band(bm, "low", X_cal)
        up_band = pred + eval_band(bm, "up", X_cal)
        a_low = a_up = alpha / 2.0
        q_low = conformal_quantile(lo_band - y_cal, a_low)
        q_up = conformal_quantile(y_cal - up_band, a_up)
        return CalibrationResult(
            mode="asymmetric",
            alpha=alpha,
            m=m,
            q_low=q_low,
            q_up=q_up,
            alpha_low=a_low,
            alpha_up=a_up,
        )
    raise ParameterError(f"unknown calibration mode {mode!r}")


def intervals(bm: BandModel, cal: CalibrationResult, X_new) -> np.ndarray:
    """Array of (lo, hi) per row of X_new; crossed endpoints become the empty
    marker (nan, nan), counted as non-covering downstream."""
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    pred = predict(bm.predictor, X_new)
    f_low = eval_band(bm, "low", X_new)
    f_up = eval_band(bm, "up", X_new)
    if cal.mode == "symmetric":
        lo = pred - f_low - cal.q
        hi = pred + f_up + cal.q
    else:
        lo = pred - f_low - cal.q_low
        hi = pred + f_up + cal.q_up
    out = np.column_stack([lo, hi])
    crossed = out[:, 0] > out[:, 1]
    out[crossed] = np.nan
    return out


def coverage(intervals_arr: np.ndarray, y_true) -> float:
    """Fraction of closed intervals containing y; empty markers never cover."""
    iv = np.asarray(intervals_arr, dtype=float)
    y = np.asarray(y_true, dtype=float).ravel()
    if iv.shape[0] != y.shape[0]:
        raise ParameterError("intervals and labels differ in length")
    with np.errstate(invalid="ignore"):
        inside = (iv[:, 0] <= y) & (y <= iv[:, 1])
    return float(np.mean(inside))


def per_side_coverage(intervals_arr: np.ndarray, y_true) -> tuple[float, float]:
    """Fractions y >= lo and y <= hi (lower and upper coverage)."""
    iv = np.asarray(intervals_arr, dtype=float)
    y = np.asarray(y_true, dtype=float).ravel()
    with np.errstate(invalid="ignore"):
        above = np.where(np.isnan(iv[:, 0]), False, iv[:, 0] <= y)
        below = np.where(np.isnan(iv[:, 1]), False, y <= iv[:, 1])
    return float(np.mean(above)), float(np.mean(below))
