import numpy as np
import pytest

from ksos.solver import OperatorPenalty, ProblemSpec, TrainSetPenalty
from ksos.spectral import KernelSpec, RegParams, kernel_model


def heteroscedastic_data(n, seed, d=1):
    """Piecewise-smooth mean with x-dependent Gaussian noise on [-1, 1]."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    t = X[:, 0]
    mean = np.where(10 * t + 1 <= 9.6, np.sin(np.pi * (2 * t + 0.2)), t - 0.9)
    sigma = np.sqrt(0.1 + 2.0 * t**2)
    y = mean + sigma * rng.standard_normal(n)
    return X, y, mean


def make_problem(
    n=6,
    seed=0,
    penalty=None,
    b=1.0,
    theta=0.6,
    lam1=0.0,
    lam2=1.0,
    theta_up=None,
):
    """Small solver problem over heteroscedastic residuals."""
    X, y, mean = heteroscedastic_data(n, seed)
    km_low = kernel_model(X, KernelSpec(theta))
    km_up = km_low if theta_up is None else kernel_model(X, KernelSpec(theta_up))
    return ProblemSpec(
        residuals=y - mean,
        km_low=km_low,
        km_up=km_up,
        b=b,
        reg_low=RegParams(lam1, lam2),
        reg_up=RegParams(lam1, lam2),
        penalty=penalty,
    )


@pytest.fixture
def scalar_problem():
    """n=1, K=[[1]], residual 2, b=0, lam1=0, lam2=1: dual max 4 at gamma_up=4."""
    km = kernel_model(np.array([[0.0]]), KernelSpec(1.0))
    return ProblemSpec(
        residuals=np.array([2.0]),
        km_low=km,
        km_up=km,
        b=0.0,
        reg_low=RegParams(0.0, 1.0),
        reg_up=RegParams(0.0, 1.0),
        penalty=None,
    )


def operator_problem(n=5, seed=1, b=1.0, lam1=0.2, lam2=1.0, pen1=0.3, pen2=1.0):
    return make_problem(n=n, seed=seed, penalty=OperatorPenalty(pen1, pen2), b=b, lam1=lam1, lam2=lam2)


def trainset_problem(n=5, seed=2, b=1.0, lam1=0.2, lam2=1.0, lam_pen=0.5, theta_up=None):
    return make_problem(
        n=n, seed=seed, penalty=TrainSetPenalty(lam_pen), b=b, lam1=lam1, lam2=lam2, theta_up=theta_up
    )
