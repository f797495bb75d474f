"""Band models: evaluation, the asymmetric score, and sup-gap diagnostics.

A BandModel bundles the recovered PSD coefficient matrices with the kernel
models and centering predictor they were trained with. Band values are the
quadratic forms f(x) = Phi(x).T A Phi(x), clamped at zero against floating
point noise near the null space of A.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ParameterError
from .predictor import Predictor, predict
from .rng import stream
from .solver import (
    BandPair,
    ProblemSpec,
    SolverSettings,
    kkt_check,
    recover_band_pair,
    solve,
)
from .spectral import KernelModel, KernelSpec, RegParams, kernel_model, nuclear_norm

SUP_GRID_POINTS = 10_000


@dataclass(frozen=True)
class BandModel:
    """Everything needed to evaluate calibratable bands at new points."""

    pair: BandPair
    predictor: Predictor
    km_low: KernelModel
    km_up: KernelModel
    normalization: Any = None

    @property
    def X_train(self) -> np.ndarray:
        return self.km_low.X


def eval_band(bm: BandModel, side: str, X_new: np.ndarray) -> np.ndarray:
    """Nonnegative band values f_side(x) for each row of X_new."""
    if side == "low":
        km, A = bm.km_low, bm.pair.A_low
    elif side == "up":
        km, A = bm.km_up, bm.pair.A_up
    else:
        raise ParameterError(f"side must be 'low' or 'up', got {side!r}")
    Phi = km.features(X_new)
    vals = np.einsum("in,in->n", Phi, A @ Phi)
    return np.maximum(vals, 0.0)


def score(bm: BandModel, x, y) -> float:
    """max(m(x) - f_low(x) - y, y - m(x) - f_up(x)); <= 0 iff y is inside."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = predict(bm.predictor, x)[0]
    f_low = eval_band(bm, "low", x)[0]
    f_up = eval_band(bm, "up", x)[0]
    return float(max(m - f_low - y, y - m - f_up))


def scores(bm: BandModel, X, y) -> np.ndarray:
    """Vectorized score over a dataset."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    m = predict(bm.predictor, X)
    f_low = eval_band(bm, "low", X)
    f_up = eval_band(bm, "up", X)
    return np.maximum(m - f_low - y, y - m - f_up)


def matern52_product_constant(d: int) -> float:
    """RKHS product-norm constant of the unit-variance Matern 5/2 kernel."""
    return 2.0 ** (3.0 + d / 2.0) * (2.0 * np.pi) ** (d / 2.0)


def matern52_derivative_bound(theta: float, d: int) -> float:
    """Uniform bound on the mixed first derivatives of the Matern 5/2 kernel."""
    return (2.0 * np.pi) ** (d / 4.0) * np.sqrt(d / 3.0) / theta


def _probe_points(X_train: np.ndarray, count: int, seed: int = 0) -> np.ndarray:
    """Quasi-uniform grid over the training bounding box for d <= 2, uniform
    samples above."""
    lo = X_train.min(axis=0)
    hi = X_train.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    d = X_train.shape[1]
    if d == 1:
        return np.linspace(lo[0], hi[0], count).reshape(-1, 1)
    if d == 2:
        side = int(np.ceil(np.sqrt(count)))
        g0 = np.linspace(lo[0], hi[0], side)
        g1 = np.linspace(lo[1], hi[1], side)
        gx, gy = np.meshgrid(g0, g1)
        return np.column_stack([gx.ravel(), gy.ravel()])[:count]
    rng = stream(seed, "probe")
    return lo + span * rng.uniform(size=(count, d))


def _observed_sup_gap(bm: BandModel, points: np.ndarray) -> float:
    gap = eval_band(bm, "low", points) - eval_band(bm, "up", points)
    return float(np.max(np.abs(gap)))


def gap_bound_operator(bm: BandModel, seed: int = 0) -> tuple[float, float]:
    """Sup-gap bound from the nuclear norm of the matrix difference, plus the
    observed sup over probe points."""
    if bm.km_low.spec != bm.km_up.spec:
        raise ParameterError("operator gap bound needs a shared kernel on both sides")
    d = bm.X_train.shape[1]
    bound = matern52_product_constant(d) * 1.0 * nuclear_norm(bm.pair.A_low - bm.pair.A_up)
    observed = _observed_sup_gap(bm, _probe_points(bm.X_train, SUP_GRID_POINTS, seed))
    return bound, observed


def fill_in_distance(X_train: np.ndarray, count: int = SUP_GRID_POINTS, seed: int = 0):
    """Largest distance from a probe point to the training set, over the
    bounding box; grid-exact for d <= 3, sampled (flagged) above."""
    d = X_train.shape[1]
    approximate = d > 3
    points = _probe_points(X_train, count, seed)
    d2 = (
        np.sum(points * points, axis=1)[:, None]
        + np.sum(X_train * X_train, axis=1)[None, :]
        - 2.0 * points @ X_train.T
    )
    rho = float(np.max(np.sqrt(np.maximum(d2.min(axis=1), 0.0))))
    return rho, approximate


def gap_bound_trainset(bm: BandModel, seed: int = 0) -> tuple[float, float]:
    """Sup-gap bound from the training-point gaps plus a fill-in term."""
    d = bm.X_train.shape[1]
    # conservative when the lengthscales differ: smaller theta, larger bound
    theta = min(bm.km_low.spec.lengthscale, bm.km_up.spec.lengthscale)
    diff_nuc = nuclear_norm(bm.pair.A_low - bm.pair.A_up)
    c = 2.0 * d * matern52_derivative_bound(theta, d) * matern52_product_constant(d) * diff_nuc
    rho, _ = fill_in_distance(bm.X_train, seed=seed)
    train_gap = eval_band(bm, "low", bm.X_train) - eval_band(bm, "up", bm.X_train)
    bound = 2.0 * c * rho + float(np.sqrt(np.sum(train_gap**2)))
    observed = _observed_sup_gap(bm, _probe_points(bm.X_train, SUP_GRID_POINTS, seed))
    return bound, observed


def fit_band_model(
    X: np.ndarray,
    y: np.ndarray,
    predictor: Predictor,
    theta_low: float,
    theta_up: float,
    b: float,
    reg_low: RegParams,
    reg_up: RegParams,
    penalty=None,
    settings: SolverSettings | None = None,
    normalization: Any = None,
    jitter: float = 0.0,
):
    """Solve the dual on (X, y) residuals and wrap the recovery in a BandModel.

    Returns (BandModel, SolveReport); the report carries the training-set
    constraint violation and, on tiny problems, the relative duality gap.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    residuals = y - predict(predictor, X)
    km_low = kernel_model(X, KernelSpec(float(theta_low)), jitter)
    km_up = km_low if theta_up == theta_low else kernel_model(X, KernelSpec(float(theta_up)), jitter)
    spec = ProblemSpec(
        residuals=residuals,
        km_low=km_low,
        km_up=km_up,
        b=b,
        reg_low=reg_low,
        reg_up=reg_up,
        penalty=penalty,
    )
    ds, report = solve(spec, settings=settings)
    bp = recover_band_pair(ds, spec)
    violation, gap = kkt_check(bp, spec, dual_value=report.objective)
    report.constraint_violation = violation
    report.duality_gap_rel = gap
    bm = BandModel(
        pair=bp, predictor=predictor, km_low=km_low, km_up=km_up, normalization=normalization
    )
    return bm, report
