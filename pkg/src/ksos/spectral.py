"""Kernel evaluation, Gram factorization, and spectral functionals.

The dual problems solved elsewhere only ever touch kernels through three
objects built here: an upper-triangular factor V with K = V.T @ V, the
empirical feature map Phi(x) = V^{-T} k(x), and the Fenchel conjugates of the
nuclear + squared-Frobenius regularizer (restricted to the PSD cone, and on
general symmetric matrices) together with their gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError, ParameterError

SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic Matern 5/2 kernel with unit variance by default."""

    lengthscale: float
    variance: float = 1.0
    family: str = "matern52"

    def __post_init__(self):
        if self.family != "matern52":
            raise ParameterError(f"unsupported kernel family {self.family!r}")
        if not (self.lengthscale > 0):
            raise ParameterError("lengthscale must be positive")
        if not (self.variance > 0):
            raise ParameterError("variance must be positive")


@dataclass(frozen=True)
class RegParams:
    """Weights of the nuclear (lam1) and squared-Frobenius (lam2) penalties."""

    lam1: float
    lam2: float

    def __post_init__(self):
        if self.lam1 < 0:
            raise ParameterError("lam1 must be nonnegative")
        if not (self.lam2 > 0):
            raise ParameterError("lam2 must be positive")


@dataclass(frozen=True)
class GramFactor:
    """Kernel matrix K with Cholesky-style factor V, K + jitter*I = V.T @ V."""

    K: np.ndarray
    V: np.ndarray
    jitter: float


@dataclass(frozen=True)
class KernelModel:
    """A kernel spec bound to its training inputs and Gram factor."""

    spec: KernelSpec
    X: np.ndarray
    gf: GramFactor

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def features(self, X_new: np.ndarray) -> np.ndarray:
        """Feature vectors Phi(x) for each row of X_new, one per column."""
        return feature_matrix(self.gf, X_new, self.spec, self.X)


def _as_2d(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ParameterError("inputs must be a 2-d array of points")
    return X


def matern52(x, x_other, theta: float) -> float:
    """Matern 5/2 value k(x, x') for a single pair of points."""
    if not (theta > 0):
        raise ParameterError("theta must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_other = np.atleast_1d(np.asarray(x_other, dtype=float))
    r = np.linalg.norm(x - x_other)
    return float(_matern52_from_r(np.asarray(r), theta))


def _matern52_from_r(r: np.ndarray, theta: float) -> np.ndarray:
    s = SQRT5 * r / theta
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def kernel_matrix(X: np.ndarray, Y: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Cross-kernel matrix k(X_i, Y_j), shape (len(X), len(Y))."""
    X = _as_2d(X)
    Y = _as_2d(Y)
    if X.shape[1] != Y.shape[1]:
        raise ParameterError("dimension mismatch between point sets")
    d2 = np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :] - 2.0 * X @ Y.T
    r = np.sqrt(np.maximum(d2, 0.0))
    return spec.variance * _matern52_from_r(r, spec.lengthscale)


def gram(X: np.ndarray, spec: KernelSpec, jitter: float = 0.0) -> GramFactor:
    """Build K on X and factor K + jitter*I = V.T @ V, escalating jitter on failure.

    The escalation starts at 1e-10 * mean(diag K), multiplies by 10, and gives
    up past 1e-6 * mean(diag K).
    """
    X = _as_2d(X)
    if X.shape[0] < 1:
        raise ParameterError("need at least one input point")
    if not np.all(np.isfinite(X)):
        raise ParameterError("inputs must be finite")
    K = kernel_matrix(X, X, spec)
    K = 0.5 * (K + K.T)
    mean_diag = float(np.mean(np.diag(K)))
    cap = 1e-6 * mean_diag
    jit = float(jitter)
    while True:
        try:
            L = np.linalg.cholesky(K + jit * np.eye(K.shape[0]))
            return GramFactor(K=K, V=L.T.copy(), jitter=jit)
        except np.linalg.LinAlgError:
            nxt = 1e-10 * mean_diag if jit == 0.0 else 10.0 * jit
            if nxt > cap:
                raise NumericalError(
                    f"Gram factorization failed for n={K.shape[0]} even at jitter={jit:g}"
                ) from None
            jit = nxt


def kernel_model(X: np.ndarray, spec: KernelSpec, jitter: float = 0.0) -> KernelModel:
    X = _as_2d(X)
    return KernelModel(spec=spec, X=X, gf=gram(X, spec, jitter))


def feature_map(gf: GramFactor, x, spec: KernelSpec, X_train: np.ndarray) -> np.ndarray:
    """Phi(x) = V^{-T} k(x) for a single point, by triangular back-substitution."""
    return feature_matrix(gf, np.atleast_2d(np.asarray(x, dtype=float)), spec, X_train)[:, 0]


def feature_matrix(
    gf: GramFactor, X_new: np.ndarray, spec: KernelSpec, X_train: np.ndarray
) -> np.ndarray:
    """Columns Phi(x) for every row x of X_new, shape (n_train, n_new)."""
    X_train = _as_2d(X_train)
    X_new = _as_2d(X_new)
    if X_train.shape[0] != gf.V.shape[0]:
        raise ParameterError("factor size does not match training set")
    kx = kernel_matrix(X_train, X_new, spec)
    # V.T is lower triangular, so V.T y = k(x) solves in one sweep.
    return solve_triangular(gf.V.T, kx, lower=True)


def positive_part(A: np.ndarray) -> np.ndarray:
    """Eigenvalue clipping [A]_+ = U max(0, D) U.T after defensive symmetrization."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    try:
        eigvals, eigvecs = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed in positive_part") from exc
    pos = np.maximum(eigvals, 0.0)
    return (eigvecs * pos) @ eigvecs.T


def psd_reg_conjugate(B: np.ndarray, p: RegParams) -> float:
    """Conjugate of lam1*nuclear + lam2*Frobenius^2 on the PSD cone."""
    shifted = positive_part(np.asarray(B, dtype=float) - p.lam1 * np.eye(B.shape[0]))
    return float(np.sum(shifted * shifted) / (4.0 * p.lam2))


def psd_reg_conjugate_grad(B: np.ndarray, p: RegParams) -> np.ndarray:
    """Gradient of psd_reg_conjugate; always PSD."""
    shifted = positive_part(np.asarray(B, dtype=float) - p.lam1 * np.eye(B.shape[0]))
    return shifted / (2.0 * p.lam2)


def psd_reg_conjugate_value_grad(B: np.ndarray, p: RegParams) -> tuple[float, np.ndarray]:
    """Value and gradient of psd_reg_conjugate from a single eigendecomposition."""
    B = np.asarray(B, dtype=float)
    A = 0.5 * (B + B.T) - p.lam1 * np.eye(B.shape[0])
    try:
        eigvals, eigvecs = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed in psd_reg_conjugate") from exc
    pos = np.maximum(eigvals, 0.0)
    value = float(np.sum(pos * pos) / (4.0 * p.lam2))
    grad = (eigvecs * (pos / (2.0 * p.lam2))) @ eigvecs.T
    return value, grad


def sym_reg_conjugate_value_grad(
    B: np.ndarray, lam1: float, lam2: float
) -> tuple[float, np.ndarray]:
    """Value and gradient of sym_reg_conjugate from a single eigendecomposition."""
    if lam1 < 0 or not (lam2 > 0):
        raise ParameterError("need lam1 >= 0 and lam2 > 0")
    B = np.asarray(B, dtype=float)
    B = 0.5 * (B + B.T)
    try:
        eigvals, eigvecs = np.linalg.eigh(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed in sym_reg_conjugate") from exc
    t = np.maximum(np.abs(eigvals) - lam1, 0.0)
    value = float(np.sum(t * t) / (4.0 * lam2))
    grad = (eigvecs * (np.sign(eigvals) * t / (2.0 * lam2))) @ eigvecs.T
    return value, grad


def sym_reg_conjugate(B: np.ndarray, lam1: float, lam2: float) -> float:
    """Conjugate of lam1*nuclear + lam2*Frobenius^2 over symmetric matrices.

    Soft-thresholds the absolute eigenvalues: sum_i max(0, |e_i| - lam1)^2 / (4 lam2).
    """
    if lam1 < 0 or not (lam2 > 0):
        raise ParameterError("need lam1 >= 0 and lam2 > 0")
    B = np.asarray(B, dtype=float)
    B = 0.5 * (B + B.T)
    try:
        eigvals = np.linalg.eigvalsh(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed in sym_reg_conjugate") from exc
    t = np.maximum(np.abs(eigvals) - lam1, 0.0)
    return float(np.sum(t * t) / (4.0 * lam2))


def sym_reg_conjugate_grad(B: np.ndarray, lam1: float, lam2: float) -> np.ndarray:
    """Gradient of sym_reg_conjugate; symmetric, not necessarily PSD."""
    if lam1 < 0 or not (lam2 > 0):
        raise ParameterError("need lam1 >= 0 and lam2 > 0")
    B = np.asarray(B, dtype=float)
    B = 0.5 * (B + B.T)
    try:
        eigvals, eigvecs = np.linalg.eigh(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed in sym_reg_conjugate_grad") from exc
    t = np.sign(eigvals) * np.maximum(np.abs(eigvals) - lam1, 0.0)
    return (eigvecs * (t / (2.0 * lam2))) @ eigvecs.T


def nuclear_norm(A: np.ndarray) -> float:
    """Sum of singular values; for symmetric input, sum of |eigenvalues|."""
    A = np.asarray(A, dtype=float)
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (A + A.T)))))
