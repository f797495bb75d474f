"""Dual solvers for the band-learning problems and primal recovery.

Three problem flavors share one machinery: the unpenalized asymmetric problem
(two decoupled multiplier vectors), the operator symmetry penalty (adds a
symmetric coupling matrix W), and the training-set symmetry penalty (adds a
coupling vector alpha0). Each dual is concave; we maximize it with L-BFGS-B
under nonnegativity bounds on the multipliers and recover the PSD band
coefficient matrices in closed form from the optimum.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from threadpoolctl import threadpool_limits

from .errors import NumericalError, ParameterError
from .spectral import (
    KernelModel,
    RegParams,
    nuclear_norm,
    positive_part,
    psd_reg_conjugate_value_grad,
    sym_reg_conjugate_value_grad,
)

# below this size, threaded BLAS loses far more to synchronization than it
# gains; the dual evaluations are dominated by ~n x n eigendecompositions
SINGLE_THREAD_MAX_N = 256


@dataclass(frozen=True)
class OperatorPenalty:
    """Nuclear + Frobenius penalty on the difference of the band operators."""

    lam1: float
    lam2: float

    def __post_init__(self):
        if self.lam1 < 0 or not (self.lam2 > 0):
            raise ParameterError("operator penalty needs lam1 >= 0 and lam2 > 0")


@dataclass(frozen=True)
class TrainSetPenalty:
    """Squared band-gap penalty on the training points."""

    lam: float

    def __post_init__(self):
        if not (self.lam > 0):
            raise ParameterError("training-set penalty weight must be positive")


@dataclass(frozen=True)
class SolverSettings:
    max_iter: int = 10000
    tol: float = 1e-2

    def __post_init__(self):
        if self.max_iter < 1 or not (self.tol > 0):
            raise ParameterError("invalid solver settings")


@dataclass(frozen=True)
class ProblemSpec:
    """One fitted-band problem: residuals, kernels, weights, penalty kind."""

    residuals: np.ndarray
    km_low: KernelModel
    km_up: KernelModel
    b: float
    reg_low: RegParams
    reg_up: RegParams
    penalty: OperatorPenalty | TrainSetPenalty | None = None

    def __post_init__(self):
        r = np.asarray(self.residuals, dtype=float)
        object.__setattr__(self, "residuals", r)
        if r.ndim != 1 or not np.all(np.isfinite(r)):
            raise ParameterError("residuals must be a finite vector")
        if r.shape[0] != self.km_low.n or r.shape[0] != self.km_up.n:
            raise ParameterError("residual length does not match kernel models")
        if self.b < 0:
            raise ParameterError("width weight b must be nonnegative")
        if isinstance(self.penalty, OperatorPenalty) and not self.shared_kernel:
            raise ParameterError("operator penalty requires a shared kernel model")

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    @property
    def shared_kernel(self) -> bool:
        return (
            self.km_low.spec == self.km_up.spec
            and self.km_low.X.shape == self.km_up.X.shape
            and np.array_equal(self.km_low.X, self.km_up.X)
        )


@dataclass
class DualState:
    """Multipliers per side plus the penalty coupling variable, if any."""

    gamma_low: np.ndarray
    gamma_up: np.ndarray
    coupling: np.ndarray | None = None

    def copy(self) -> "DualState":
        return DualState(
            self.gamma_low.copy(),
            self.gamma_up.copy(),
            None if self.coupling is None else self.coupling.copy(),
        )


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    objective: float
    grad_inf_norm: float
    objective_trace: list = field(default_factory=list)
    n_evals: int = 0
    constraint_violation: float | None = None
    duality_gap_rel: float | None = None
    message: str = ""


@dataclass(frozen=True)
class BandPair:
    """Recovered PSD coefficient matrices for the lower and upper bands."""

    A_low: np.ndarray
    A_up: np.ndarray


def zero_state(spec: ProblemSpec) -> DualState:
    n = spec.n
    if isinstance(spec.penalty, OperatorPenalty):
        coupling = np.zeros((n, n))
    elif isinstance(spec.penalty, TrainSetPenalty):
        coupling = np.zeros(n)
    else:
        coupling = None
    return DualState(np.zeros(n), np.zeros(n), coupling)


def _dual_matrix(V: np.ndarray, diag: np.ndarray) -> np.ndarray:
    """V Diag(diag) V.T without forming the diagonal matrix."""
    return (V * diag) @ V.T


def _diag_vt_g_v(V: np.ndarray, G: np.ndarray) -> np.ndarray:
    """diag(V.T G V), one entry per training point."""
    return np.einsum("ij,ij->j", V, G @ V)


def _side(spec: ProblemSpec, side: str) -> tuple[KernelModel, RegParams, np.ndarray]:
    if side == "low":
        return spec.km_low, spec.reg_low, -spec.residuals
    if side == "up":
        return spec.km_up, spec.reg_up, spec.residuals
    raise ParameterError(f"side must be 'low' or 'up', got {side!r}")


def _check_nonneg(gamma: np.ndarray, name: str) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ParameterError(f"{name} must be entrywise nonnegative")
    return gamma


def asym_dual(gamma: np.ndarray, side: str, spec: ProblemSpec) -> tuple[float, np.ndarray]:
    """Value and gradient of the single-side dual at multipliers gamma."""
    gamma = _check_nonneg(gamma, "gamma")
    km, reg, r_side = _side(spec, side)
    diag = gamma - spec.b / spec.n
    M = _dual_matrix(km.gf.V, diag)
    conj, G = psd_reg_conjugate_value_grad(M, reg)
    value = float(gamma @ r_side) - conj
    grad = r_side - _diag_vt_g_v(km.gf.V, G)
    return value, grad


def operator_dual(
    gamma_low: np.ndarray, gamma_up: np.ndarray, W: np.ndarray, spec: ProblemSpec
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Value and gradients (in gamma_low, gamma_up, W) of the operator-penalty dual.

    The W gradient follows the objective's signs: the low-side conjugate sees
    -W, the up-side sees +W.
    """
    pen = spec.penalty
    if not isinstance(pen, OperatorPenalty):
        raise ParameterError("spec does not carry an operator penalty")
    gamma_low = _check_nonneg(gamma_low, "gamma_low")
    gamma_up = _check_nonneg(gamma_up, "gamma_up")
    W = np.asarray(W, dtype=float)
    r = spec.residuals
    V = spec.km_low.gf.V
    b_over_n = spec.b / spec.n

    M_low = _dual_matrix(V, gamma_low - b_over_n) - W
    M_up = _dual_matrix(V, gamma_up - b_over_n) + W
    conj_low, G_low = psd_reg_conjugate_value_grad(M_low, spec.reg_low)
    conj_up, G_up = psd_reg_conjugate_value_grad(M_up, spec.reg_up)
    conj_pen, G_pen = sym_reg_conjugate_value_grad(W, pen.lam1, pen.lam2)

    value = float((gamma_up - gamma_low) @ r) - conj_pen - conj_low - conj_up
    g_low = -r - _diag_vt_g_v(V, G_low)
    g_up = r - _diag_vt_g_v(V, G_up)
    g_W = -G_pen + G_low - G_up
    return value, g_low, g_up, g_W


def trainset_dual(
    gamma_low: np.ndarray, gamma_up: np.ndarray, alpha0: np.ndarray, spec: ProblemSpec
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Value and gradients (in gamma_low, gamma_up, alpha0) of the training-set dual."""
    pen = spec.penalty
    if not isinstance(pen, TrainSetPenalty):
        raise ParameterError("spec does not carry a training-set penalty")
    gamma_low = _check_nonneg(gamma_low, "gamma_low")
    gamma_up = _check_nonneg(gamma_up, "gamma_up")
    alpha0 = np.asarray(alpha0, dtype=float)
    r = spec.residuals
    b_over_n = spec.b / spec.n
    V_low, V_up = spec.km_low.gf.V, spec.km_up.gf.V

    M_low = _dual_matrix(V_low, gamma_low + alpha0 - b_over_n)
    M_up = _dual_matrix(V_up, gamma_up - alpha0 - b_over_n)
    conj_low, G_low = psd_reg_conjugate_value_grad(M_low, spec.reg_low)
    conj_up, G_up = psd_reg_conjugate_value_grad(M_up, spec.reg_up)

    value = (
        float((gamma_up - gamma_low) @ r)
        - float(alpha0 @ alpha0) / (4.0 * pen.lam)
        - conj_low
        - conj_up
    )
    d_low = _diag_vt_g_v(V_low, G_low)
    d_up = _diag_vt_g_v(V_up, G_up)
    g_low = -r - d_low
    g_up = r - d_up
    g_alpha = -alpha0 / (2.0 * pen.lam) - d_low + d_up
    return value, g_low, g_up, g_alpha


class _Packing:
    """Flatten a DualState into the solver vector and back.

    Symmetric W is stored as its upper triangle; the packed gradient doubles
    the off-diagonal entries so that chain rule through the symmetrization is
    exact.
    """

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        n = spec.n
        self.n = n
        if isinstance(spec.penalty, OperatorPenalty):
            self.iu = np.triu_indices(n)
            self.w_scale = np.where(self.iu[0] == self.iu[1], 1.0, 2.0)
            self.size = 2 * n + self.iu[0].size
        elif isinstance(spec.penalty, TrainSetPenalty):
            self.size = 3 * n
        else:
            self.size = 2 * n

    def bounds(self) -> list:
        free = self.size - 2 * self.n
        return [(0.0, None)] * (2 * self.n) + [(None, None)] * free

    def pack(self, ds: DualState) -> np.ndarray:
        n = self.n
        if ds.gamma_low.shape != (n,) or ds.gamma_up.shape != (n,):
            raise ParameterError("multiplier vectors do not match the problem size")
        if isinstance(self.spec.penalty, OperatorPenalty):
            if ds.coupling is None or ds.coupling.shape != (n, n):
                raise ParameterError("operator penalty expects an (n, n) coupling matrix")
        elif isinstance(self.spec.penalty, TrainSetPenalty):
            if ds.coupling is None or ds.coupling.shape != (n,):
                raise ParameterError("training-set penalty expects an (n,) coupling vector")
        elif ds.coupling is not None:
            raise ParameterError("unpenalized problem expects no coupling variable")
        x = np.empty(self.size)
        x[:n] = ds.gamma_low
        x[n : 2 * n] = ds.gamma_up
        if isinstance(self.spec.penalty, OperatorPenalty):
            x[2 * n :] = ds.coupling[self.iu]
        elif isinstance(self.spec.penalty, TrainSetPenalty):
            x[2 * n :] = ds.coupling
        return x

    def unpack(self, x: np.ndarray) -> DualState:
        n = self.n
        gamma_low = np.maximum(x[:n], 0.0)
        gamma_up = np.maximum(x[n : 2 * n], 0.0)
        if isinstance(self.spec.penalty, OperatorPenalty):
            W = np.zeros((n, n))
            W[self.iu] = x[2 * n :]
            W = W + W.T - np.diag(np.diag(W))
            return DualState(gamma_low, gamma_up, W)
        if isinstance(self.spec.penalty, TrainSetPenalty):
            return DualState(gamma_low, gamma_up, x[2 * n :].copy())
        return DualState(gamma_low, gamma_up, None)

    def value_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        ds = self.unpack(x)
        spec = self.spec
        n = self.n
        g = np.empty(self.size)
        if isinstance(spec.penalty, OperatorPenalty):
            value, g_low, g_up, g_W = operator_dual(ds.gamma_low, ds.gamma_up, ds.coupling, spec)
            g[:n], g[n : 2 * n] = g_low, g_up
            g[2 * n :] = g_W[self.iu] * self.w_scale
        elif isinstance(spec.penalty, TrainSetPenalty):
            value, g_low, g_up, g_a = trainset_dual(ds.gamma_low, ds.gamma_up, ds.coupling, spec)
            g[:n], g[n : 2 * n], g[2 * n :] = g_low, g_up, g_a
        else:
            v_low, g_low = asym_dual(ds.gamma_low, "low", spec)
            v_up, g_up = asym_dual(ds.gamma_up, "up", spec)
            value = v_low + v_up
            g[:n], g[n : 2 * n] = g_low, g_up
        return value, g


def _projected_grad_inf(x: np.ndarray, grad_min: np.ndarray, n_bounded: int) -> float:
    """Inf-norm of the projected gradient of the minimized objective."""
    pg = grad_min.copy()
    at_bound = np.zeros_like(x, dtype=bool)
    at_bound[:n_bounded] = x[:n_bounded] <= 0.0
    pg[at_bound] = np.minimum(pg[at_bound], 0.0)
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def _projected_ascent_phase(value_grad, x, n_bounded, max_steps=120):
    """Monotone projected-gradient rescue with a backtracking/doubling step.

    L-BFGS-B can stall on these duals: the Hessian jumps at the spectral
    kinks, so its curvature model produces microscopic steps and a spurious
    flat-progress stop, and on the exactly-linear stretch below gamma = b/n
    (large width weights) its Wolfe line search cannot terminate at all.
    Plain projected ascent is slow but makes guaranteed progress in both
    situations; a handful of steps unsticks the quasi-Newton restart.
    """
    value, grad = value_grad(x)
    evals = 1
    accepted = 0
    step = None
    for _ in range(max_steps):
        d = grad.copy()
        at_lb = np.zeros_like(x, dtype=bool)
        at_lb[:n_bounded] = x[:n_bounded] <= 0.0
        d[at_lb & (d < 0.0)] = 0.0
        nd = np.linalg.norm(d)
        if nd == 0.0:
            break
        if step is None:
            step = 1.0 / nd
        improved = False
        while step * nd > 1e-14 * max(1.0, np.linalg.norm(x)):
            cand = x + step * d
            cand[:n_bounded] = np.maximum(cand[:n_bounded], 0.0)
            v, g = value_grad(cand)
            evals += 1
            if np.isfinite(v) and v > value:
                x, value, grad = cand, v, g
                accepted += 1
                step *= 2.0
                improved = True
                break
            step *= 0.25
        if not improved:
            break
    return x, accepted, evals


def solve(
    spec: ProblemSpec,
    init: DualState | None = None,
    settings: SolverSettings | None = None,
) -> tuple[DualState, SolveReport]:
    """Maximize the dual matching spec.penalty from init (zeros by default).

    Converged means the projected-gradient inf-norm is at most
    tol * max(1, |objective|), checked at the returned iterate.
    """
    settings = settings or SolverSettings()
    packing = _Packing(spec)
    x0 = packing.pack(init) if init is not None else np.zeros(packing.size)

    trace: list[float] = []
    last = {"f": None, "n": 0}

    def fun(x):
        value, grad = packing.value_grad(x)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise NumericalError(
                f"non-finite dual objective/gradient at |x|={np.max(np.abs(x)):g}"
            )
        last["f"] = value
        last["n"] += 1
        return -value, -grad

    def callback(xk):
        trace.append(last["f"])

    n_bounded = 2 * spec.n
    x = x0
    total_iters = 0
    message = ""
    limiter = (
        threadpool_limits(limits=1) if spec.n <= SINGLE_THREAD_MAX_N else nullcontext()
    )
    with limiter:
        for _round in range(20):
            remaining = settings.max_iter - total_iters
            if remaining <= 0:
                break
            result = minimize(
                fun,
                x,
                jac=True,
                method="L-BFGS-B",
                bounds=packing.bounds(),
                callback=callback,
                options={
                    "maxiter": remaining,
                    "gtol": settings.tol,
                    "ftol": 1e-15,
                    "maxcor": 20,
                    "maxls": 40,
                },
            )
            x = result.x
            total_iters += int(result.nit)
            message = str(result.message)
            value, grad = packing.value_grad(x)
            pg = _projected_grad_inf(x, -grad, n_bounded)
            if pg <= settings.tol * max(1.0, abs(value)) or total_iters >= settings.max_iter:
                break
            x, accepted, evals = _projected_ascent_phase(packing.value_grad, x, n_bounded)
            last["n"] += evals
            total_iters += accepted
            if accepted == 0:
                break

    ds = packing.unpack(x)
    value, grad = packing.value_grad(x)
    pg = _projected_grad_inf(x, -grad, n_bounded)
    converged = pg <= settings.tol * max(1.0, abs(value))
    report = SolveReport(
        iterations=total_iters,
        converged=converged,
        objective=value,
        grad_inf_norm=pg,
        objective_trace=trace,
        n_evals=last["n"],
        message=message,
    )
    return ds, report


def recover_band_pair(ds: DualState, spec: ProblemSpec) -> BandPair:
    """Closed-form primal recovery from optimal multipliers; both matrices PSD."""
    b_over_n = spec.b / spec.n
    V_low, V_up = spec.km_low.gf.V, spec.km_up.gf.V
    n = spec.n
    if isinstance(spec.penalty, OperatorPenalty):
        if ds.coupling is None or ds.coupling.shape != (n, n):
            raise ParameterError("operator penalty expects an (n, n) coupling matrix")
        W = ds.coupling
        A_low = positive_part(
            _dual_matrix(V_low, ds.gamma_low - b_over_n) - W - spec.reg_low.lam1 * np.eye(n)
        ) / (2.0 * spec.reg_low.lam2)
        A_up = positive_part(
            _dual_matrix(V_up, ds.gamma_up - b_over_n) + W - spec.reg_up.lam1 * np.eye(n)
        ) / (2.0 * spec.reg_up.lam2)
    elif isinstance(spec.penalty, TrainSetPenalty):
        if ds.coupling is None or ds.coupling.shape != (n,):
            raise ParameterError("training-set penalty expects an (n,) coupling vector")
        a0 = ds.coupling
        A_low = positive_part(
            _dual_matrix(V_low, ds.gamma_low + a0 - b_over_n) - spec.reg_low.lam1 * np.eye(n)
        ) / (2.0 * spec.reg_low.lam2)
        A_up = positive_part(
            _dual_matrix(V_up, ds.gamma_up - a0 - b_over_n) - spec.reg_up.lam1 * np.eye(n)
        ) / (2.0 * spec.reg_up.lam2)
    else:
        if ds.coupling is not None:
            raise ParameterError("unpenalized problem expects no coupling variable")
        A_low = positive_part(
            _dual_matrix(V_low, ds.gamma_low - b_over_n) - spec.reg_low.lam1 * np.eye(n)
        ) / (2.0 * spec.reg_low.lam2)
        A_up = positive_part(
            _dual_matrix(V_up, ds.gamma_up - b_over_n) - spec.reg_up.lam1 * np.eye(n)
        ) / (2.0 * spec.reg_up.lam2)
    return BandPair(A_low=A_low, A_up=A_up)


def band_values_on_train(A: np.ndarray, km: KernelModel) -> np.ndarray:
    """f(X_i) = Phi(X_i).T A Phi(X_i) on the training inputs, via diag(V.T A V)."""
    return _diag_vt_g_v(km.gf.V, A)


def primal_objective(bp: BandPair, spec: ProblemSpec) -> float:
    """Penalized primal objective evaluated at bp (feasibility not enforced)."""
    f_low = band_values_on_train(bp.A_low, spec.km_low)
    f_up = band_values_on_train(bp.A_up, spec.km_up)
    value = spec.b / spec.n * float(np.sum(f_low + f_up))
    for A, reg in ((bp.A_low, spec.reg_low), (bp.A_up, spec.reg_up)):
        value += reg.lam1 * nuclear_norm(A) + reg.lam2 * float(np.sum(A * A))
    if isinstance(spec.penalty, OperatorPenalty):
        D = bp.A_low - bp.A_up
        value += spec.penalty.lam1 * nuclear_norm(D) + spec.penalty.lam2 * float(np.sum(D * D))
    elif isinstance(spec.penalty, TrainSetPenalty):
        value += spec.penalty.lam * float(np.sum((f_low - f_up) ** 2))
    return value


def kkt_check(
    bp: BandPair, spec: ProblemSpec, dual_value: float | None = None
) -> tuple[float, float | None]:
    """Max coverage-constraint violation on the training set, plus an optional
    relative duality gap (only evaluated for n <= 30 to keep it cheap)."""
    f_low = band_values_on_train(bp.A_low, spec.km_low)
    f_up = band_values_on_train(bp.A_up, spec.km_up)
    r = spec.residuals
    violation = float(max(0.0, np.max(np.concatenate([-r - f_low, r - f_up]))))
    gap = None
    if dual_value is not None and spec.n <= 30:
        primal = primal_objective(bp, spec)
        gap = abs(primal - dual_value) / (1.0 + abs(dual_value))
    return violation, gap


def warm_start_sweep(
    base_spec: ProblemSpec,
    lam_grid,
    warm: bool = True,
    settings: SolverSettings | None = None,
) -> list[tuple[float, BandPair, SolveReport]]:
    """Solve the penalized problem along an ascending penalty grid.

    With warm=True each grid point starts from the previous optimum; with
    warm=False every point starts from zeros (the cold baseline used for
    iteration-count comparisons). For the operator penalty the grid value sets
    both penalty weights.
    """
    lam_grid = np.asarray(lam_grid, dtype=float)
    if lam_grid.size == 0:
        raise ParameterError("penalty grid is empty")
    if np.any(np.diff(lam_grid) < 0):
        raise ParameterError("penalty grid must be sorted ascending")
    if base_spec.penalty is None:
        raise ParameterError("warm-start sweep needs a penalized problem")

    results = []
    prev: DualState | None = None
    for lam in lam_grid:
        if isinstance(base_spec.penalty, TrainSetPenalty):
            spec = replace(base_spec, penalty=TrainSetPenalty(float(lam)))
        else:
            spec = replace(base_spec, penalty=OperatorPenalty(float(lam), float(lam)))
        ds, report = solve(spec, init=prev if warm else None, settings=settings)
        bp = recover_band_pair(ds, spec)
        violation, gap = kkt_check(bp, spec, dual_value=report.objective)
        report.constraint_violation = violation
        report.duality_gap_rel = gap
        results.append((float(lam), bp, report))
        if warm:
            prev = ds
    return results
