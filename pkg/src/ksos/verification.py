"""Cross-cutting test oracles: finite differences, brute-force primal, HSIC
double sums.

Everything here is deliberately written from first principles (loops, fsum,
its own projected-gradient descent) so it stays independent of the code paths
it is used to check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .rng import stream
from .solver import BandPair, OperatorPenalty, ProblemSpec, TrainSetPenalty
from .spectral import positive_part


@dataclass(frozen=True)
class OracleReport:
    name: str
    max_deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def fd_gradient(fn, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    point = np.asarray(point, dtype=float)
    grad = np.zeros_like(point)
    for i in range(point.size):
        e = np.zeros_like(point)
        e[i] = h
        grad[i] = (fn(point + e) - fn(point - e)) / (2.0 * h)
    return grad


def _band_values(A: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.array([V[:, i] @ A @ V[:, i] for i in range(V.shape[1])])


def primal_value(bp: BandPair, spec: ProblemSpec) -> float:
    """Penalized primal objective at bp, computed from scratch."""
    V_low, V_up = spec.km_low.gf.V, spec.km_up.gf.V
    f_low = _band_values(bp.A_low, V_low)
    f_up = _band_values(bp.A_up, V_up)
    value = spec.b / spec.n * math.fsum(f_low + f_up)
    for A, reg in ((bp.A_low, spec.reg_low), (bp.A_up, spec.reg_up)):
        sym = 0.5 * (A + A.T)
        value += reg.lam1 * float(np.sum(np.abs(np.linalg.eigvalsh(sym))))
        value += reg.lam2 * float(np.sum(A * A))
    if isinstance(spec.penalty, OperatorPenalty):
        D = 0.5 * ((bp.A_low - bp.A_up) + (bp.A_low - bp.A_up).T)
        value += spec.penalty.lam1 * float(np.sum(np.abs(np.linalg.eigvalsh(D))))
        value += spec.penalty.lam2 * float(np.sum(D * D))
    elif isinstance(spec.penalty, TrainSetPenalty):
        value += spec.penalty.lam * math.fsum((f_low - f_up) ** 2)
    return value


def _penalized_value_grad(A_low, A_up, spec, rho):
    """Primal objective plus rho * sum of squared constraint violations."""
    V_low, V_up = spec.km_low.gf.V, spec.km_up.gf.V
    r = spec.residuals
    f_low = _band_values(A_low, V_low)
    f_up = _band_values(A_up, V_up)
    viol_low = np.maximum(-r - f_low, 0.0)
    viol_up = np.maximum(r - f_up, 0.0)

    value = primal_value(BandPair(A_low, A_up), spec)
    value += rho * float(np.sum(viol_low**2) + np.sum(viol_up**2))

    def side_grad(A, V, reg, viol, other_gap):
        # d/dA of b/n sum f + reg + rho*sum max(0, r_side - f)^2 (+ trainset term)
        coeff = spec.b / spec.n - 2.0 * rho * viol
        if isinstance(spec.penalty, TrainSetPenalty):
            coeff = coeff + 2.0 * spec.penalty.lam * other_gap
        G = (V * coeff) @ V.T
        sym = 0.5 * (A + A.T)
        eigvals, eigvecs = np.linalg.eigh(sym)
        G = G + reg.lam1 * (eigvecs * np.sign(eigvals)) @ eigvecs.T
        G = G + 2.0 * reg.lam2 * A
        return G

    gap = f_low - f_up
    G_low = side_grad(A_low, V_low, spec.reg_low, viol_low, gap)
    G_up = side_grad(A_up, V_up, spec.reg_up, viol_up, -gap)
    if isinstance(spec.penalty, OperatorPenalty):
        D = 0.5 * ((A_low - A_up) + (A_low - A_up).T)
        eigvals, eigvecs = np.linalg.eigh(D)
        G_pen = spec.penalty.lam1 * (eigvecs * np.sign(eigvals)) @ eigvecs.T
        G_pen = G_pen + 2.0 * spec.penalty.lam2 * D
        G_low = G_low + G_pen
        G_up = G_up - G_pen
    return value, G_low, G_up


def primal_brute(
    spec: ProblemSpec,
    n_starts: int = 8,
    seed: int = 0,
    rho_grid=(1e2, 1e4, 1e6, 1e8),
    max_iter: int = 2000,
) -> float:
    """Independent primal optimum by projected-gradient descent on the PSD cone.

    Constraints are enforced through an escalating quadratic penalty; each
    stage continues from the previous one. Convexity makes any local optimum
    global, so the best value over random starts is the answer. Intended for
    n <= 3.
    """
    n = spec.n
    if n > 5:
        raise ParameterError("brute-force primal is intended for tiny problems")
    rng = stream(seed, "starts")
    best = np.inf
    for start in range(n_starts):
        if start == 0:
            A_low = np.zeros((n, n))
            A_up = np.zeros((n, n))
        else:
            B = rng.standard_normal((n, n))
            A_low = positive_part(B @ B.T / n)
            B = rng.standard_normal((n, n))
            A_up = positive_part(B @ B.T / n)
        for rho in rho_grid:
            step = 1.0 / rho
            value, G_low, G_up = _penalized_value_grad(A_low, A_up, spec, rho)
            for _ in range(max_iter):
                accepted = False
                while step > 1e-16:
                    cand_low = positive_part(A_low - step * G_low)
                    cand_up = positive_part(A_up - step * G_up)
                    cand_val, cG_low, cG_up = _penalized_value_grad(cand_low, cand_up, spec, rho)
                    if cand_val <= value:
                        accepted = True
                        break
                    step *= 0.5
                if not accepted:
                    break
                move = max(np.max(np.abs(cand_low - A_low)), np.max(np.abs(cand_up - A_up)))
                drop = value - cand_val
                A_low, A_up, value, G_low, G_up = cand_low, cand_up, cand_val, cG_low, cG_up
                step *= 1.3
                if move < 1e-10 or drop < 1e-13 * max(1.0, abs(value)):
                    break
        # report the true objective, not the penalized surrogate
        best = min(best, primal_value(BandPair(A_low, A_up), spec))
    return best


def hsic_brute(u: np.ndarray, v: np.ndarray) -> float:
    """O(n^2) double-sum expansion of the biased HSIC V-statistic with the
    energy-distance kernel; matches the trace-form estimator."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    n = u.size
    if v.size != n:
        raise ParameterError("samples must have equal length")
    if n > 200:
        raise ParameterError("brute-force HSIC is intended for n <= 200")

    def k(a, b):
        return abs(a) + abs(b) - abs(a - b)

    Ku = [[k(u[i], u[j]) for j in range(n)] for i in range(n)]
    Kv = [[k(v[i], v[j]) for j in range(n)] for i in range(n)]

    term1 = math.fsum(Ku[i][j] * Kv[i][j] for i in range(n) for j in range(n)) / n**2
    sum_u = math.fsum(Ku[i][j] for i in range(n) for j in range(n))
    sum_v = math.fsum(Kv[i][j] for i in range(n) for j in range(n))
    term2 = (sum_u / n**2) * (sum_v / n**2)
    row_u = [math.fsum(Ku[i]) for i in range(n)]
    row_v = [math.fsum(Kv[i]) for i in range(n)]
    term3 = 2.0 * math.fsum(row_u[i] * row_v[i] for i in range(n)) / n**3
    return term1 + term2 - term3
