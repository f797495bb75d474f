"""Synthetic data generators, CSV ingestion, and seeded splits.

Six analytic cases with known conditional laws (so local coverage can be
estimated by conditional sampling), plus a plain CSV reader with columns
x0..x{d-1}, y and an optional m_hat column of precomputed predictions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .rng import stream

CASE_IDS = (1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    m_hat: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ParameterError("X and y lengths differ")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ParameterError("dataset entries must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class SyntheticCase:
    case_id: int
    d: int = 1
    beta: np.ndarray | None = None

    def __post_init__(self):
        if self.case_id not in CASE_IDS:
            raise ParameterError(f"unknown synthetic case {self.case_id}")
        if self.case_id not in (2, 6) and self.d != 1:
            raise ParameterError(f"case {self.case_id} is one-dimensional")
        if self.case_id == 6:
            beta = np.ones(self.d) if self.beta is None else np.asarray(self.beta, dtype=float)
            if beta.shape != (self.d,):
                raise ParameterError("beta must have one entry per dimension")
            object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class SplitPlan:
    n_pretrain: int
    n_cal: int
    n_test: int
    seed: int = 0

    def __post_init__(self):
        if min(self.n_pretrain, self.n_cal, self.n_test) <= 0:
            raise ParameterError("split sizes must be positive")


def _case1_mean(t: np.ndarray) -> np.ndarray:
    smooth = np.sin(np.pi * (2 * t + 0.2)) + 0.2 * np.cos(4 * np.pi * (2 * t + 0.2))
    return np.where(10 * t + 1 <= 9.6, smooth, t - 0.9)


def _sample_inputs(case: SyntheticCase, n: int, rng: np.random.Generator) -> np.ndarray:
    cid = case.case_id
    if cid in (1, 3, 5):
        return rng.uniform(-1.0, 1.0, size=(n, 1))
    if cid == 2:
        return rng.standard_normal((n, case.d))
    if cid == 4:
        return rng.uniform(0.0, 4.0 * np.pi, size=(n, 1))
    return rng.uniform(0.0, 1.0, size=(n, case.d))


def _sample_outputs(case: SyntheticCase, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cid = case.case_id
    n = X.shape[0]
    if cid == 1:
        t = X[:, 0]
        return _case1_mean(t) + np.sqrt(0.1 + 2.0 * t**2) * rng.standard_normal(n)
    if cid == 2:
        mean = 0.5 * np.sum(X, axis=1)
        sigma = np.sum(np.abs(np.sin(X)), axis=1)
        return mean + sigma * rng.standard_normal(n)
    if cid == 3:
        t = X[:, 0]
        return np.sin(5.0 * t) + t * rng.lognormal(0.0, 1.0, size=n)
    if cid == 4:
        t = X[:, 0]
        eps = rng.standard_normal(n)
        scale = np.where(eps < 0, 0.2, 0.4 * (np.sin(t) + 1.0) + 0.1)
        return np.sin(t) + eps * scale
    if cid == 5:
        t = X[:, 0]
        return np.sin(2.0 * t) + (0.5 + 2.0 * t) * rng.exponential(1.0, size=n)
    proj = X @ case.beta
    return 2.0 * np.sin(np.pi * proj) + np.pi * proj + np.sqrt(1.0 + proj**2) * rng.standard_normal(n)


def generate(case: SyntheticCase, n: int, seed: int) -> Dataset:
    """n draws of (X, Y) from the case's joint law, reproducible by seed."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    rng = stream(seed, "data")
    X = _sample_inputs(case, n, rng)
    y = _sample_outputs(case, X, rng)
    return Dataset(X=X, y=y, provenance=f"case{case.case_id}(seed={seed})")


def conditional_sample(case: SyntheticCase, x, n_y: int, seed: int) -> np.ndarray:
    """n_y i.i.d. draws of Y given X = x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rng = stream(seed, "conditional")
    X = np.tile(x, (n_y, 1))
    return _sample_outputs(case, X, rng)


def conditional_mean_std(case: SyntheticCase, x) -> tuple[float, float]:
    """Analytic conditional mean and standard deviation at x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cid = case.case_id
    t = x[0]
    if cid == 1:
        return float(_case1_mean(np.array([t]))[0]), float(np.sqrt(0.1 + 2 * t**2))
    if cid == 2:
        return float(0.5 * np.sum(x)), float(np.sum(np.abs(np.sin(x))))
    if cid == 3:
        # lognormal(0, 1): mean e^{1/2}, variance (e - 1) e
        return float(np.sin(5 * t) + t * np.exp(0.5)), float(
            abs(t) * np.sqrt((np.e - 1.0) * np.e)
        )
    if cid == 4:
        s_plus = 0.4 * (np.sin(t) + 1.0) + 0.1
        s_minus = 0.2
        mean = (s_plus - s_minus) / np.sqrt(2.0 * np.pi)
        second = (s_plus**2 + s_minus**2) / 2.0
        return float(np.sin(t) + mean), float(np.sqrt(second - mean**2))
    if cid == 5:
        sigma = 0.5 + 2.0 * t
        return float(np.sin(2 * t) + sigma), float(abs(sigma))
    proj = float(x @ case.beta)
    return float(2 * np.sin(np.pi * proj) + np.pi * proj), float(np.sqrt(1 + proj**2))


def split(ds: Dataset, plan: SplitPlan) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint shuffled (pretrain, calibration, test) subsets."""
    total = plan.n_pretrain + plan.n_cal + plan.n_test
    if total > ds.n:
        raise ParameterError(f"split needs {total} rows but dataset has {ds.n}")
    perm = stream(plan.seed, "split").permutation(ds.n)

    def take(sl):
        idx = perm[sl]
        return Dataset(
            X=ds.X[idx],
            y=ds.y[idx],
            m_hat=None if ds.m_hat is None else ds.m_hat[idx],
            provenance=ds.provenance,
        )

    a, b = plan.n_pretrain, plan.n_pretrain + plan.n_cal
    return take(slice(0, a)), take(slice(a, b)), take(slice(b, b + plan.n_test))


def load_csv(path) -> Dataset:
    """Read a dataset with header x0..x{d-1}, y[, m_hat]; strict and numeric."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParameterError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = 0
        while d < len(header) and header[d] == f"x{d}":
            d += 1
        if d == 0 or d >= len(header) or header[d] != "y":
            raise ParameterError(f"{path}: header must be x0..x{{d-1}},y[,m_hat]")
        has_mhat = len(header) > d + 1
        if has_mhat and (header[d + 1] != "m_hat" or len(header) > d + 2):
            raise ParameterError(f"{path}: unexpected trailing columns {header[d + 1:]}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParameterError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParameterError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ParameterError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    return Dataset(
        X=data[:, :d],
        y=data[:, d],
        m_hat=data[:, d + 1] if has_mhat else None,
        provenance=str(path),
    )


def save_csv(ds: Dataset, path) -> None:
    d = ds.X.shape[1]
    header = [f"x{i}" for i in range(d)] + ["y"] + (["m_hat"] if ds.m_hat is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[i]] + [repr(float(ds.y[i]))]
            if ds.m_hat is not None:
                row.append(repr(float(ds.m_hat[i])))
            writer.writerow(row)
