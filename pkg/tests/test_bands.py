import numpy as np
import pytest
from conftest import heteroscedastic_data

from ksos.bands import (
    BandModel,
    eval_band,
    fill_in_distance,
    fit_band_model,
    gap_bound_operator,
    gap_bound_trainset,
    score,
    scores,
)
from ksos.errors import ParameterError
from ksos.predictor import fit_kernel_ridge, precomputed
from ksos.solver import BandPair, TrainSetPenalty
from ksos.spectral import KernelSpec, RegParams, kernel_model


def make_model(A_low, A_up, X=None, theta=0.7, m_values=None):
    if X is None:
        X = np.linspace(-1, 1, A_low.shape[0]).reshape(-1, 1)
    km = kernel_model(X, KernelSpec(theta))
    m_values = np.zeros(X.shape[0]) if m_values is None else m_values
    return BandModel(
        pair=BandPair(A_low, A_up),
        predictor=precomputed(X, m_values),
        km_low=km,
        km_up=km,
    )


def fitted_model(n=40, seed=0, lam_pen=1.0, b=1.0, theta=0.5):
    X, y, _ = heteroscedastic_data(n, seed)
    pred = fit_kernel_ridge(X, y, theta=0.6, noise=1e-2)
    bm, report = fit_band_model(
        X,
        y,
        pred,
        theta_low=theta,
        theta_up=theta,
        b=b,
        reg_low=RegParams(0.0, 1.0),
        reg_up=RegParams(0.0, 1.0),
        penalty=TrainSetPenalty(lam_pen),
    )
    return bm, report


class TestEvalBand:
    def test_zero_matrix_zero_band(self):
        bm = make_model(np.zeros((5, 5)), np.zeros((5, 5)))
        Xq = np.linspace(-2, 2, 9).reshape(-1, 1)
        np.testing.assert_array_equal(eval_band(bm, "low", Xq), 0.0)

    def test_identity_matrix_on_training_points(self):
        n = 6
        X = np.linspace(-1, 1, n).reshape(-1, 1)
        bm = make_model(np.eye(n), np.eye(n), X=X)
        vals = eval_band(bm, "up", X)
        # f(X_i) = ||Phi(X_i)||^2 = K_ii = 1 when the factor is exact
        np.testing.assert_allclose(vals, 1.0, atol=1e-7)

    def test_psd_matrix_nonnegative_everywhere(self):
        rng = np.random.default_rng(1)
        B = rng.standard_normal((6, 6))
        bm = make_model(B @ B.T, B @ B.T)
        Xq = rng.uniform(-3, 3, size=(10_000, 1))
        assert np.min(eval_band(bm, "low", Xq)) >= -1e-10

    def test_bad_side_rejected(self):
        bm = make_model(np.zeros((3, 3)), np.zeros((3, 3)))
        with pytest.raises(ParameterError):
            eval_band(bm, "middle", np.zeros((1, 1)))


class TestScore:
    def test_at_center_with_zero_bands(self):
        bm = make_model(np.zeros((4, 4)), np.zeros((4, 4)), m_values=np.full(4, 1.5))
        assert score(bm, bm.X_train[0], 1.5) == 0.0

    def test_on_upper_boundary(self):
        bm, _ = fitted_model(n=25, seed=3)
        x = bm.X_train[4]
        from ksos.predictor import predict

        y_edge = predict(bm.predictor, x)[0] + eval_band(bm, "up", x.reshape(1, -1))[0]
        assert score(bm, x, y_edge) == pytest.approx(0.0, abs=1e-12)

    def test_linear_overshoot(self):
        X = np.array([[0.0]])
        km = kernel_model(X, KernelSpec(1.0))
        bm = BandModel(
            pair=BandPair(np.array([[1.0]]), np.array([[2.0]])),
            predictor=precomputed(X, np.array([0.0])),
            km_low=km,
            km_up=km,
        )
        # at the training point f_low = 1, f_up = 2, m = 0
        assert score(bm, X[0], 5.0) == pytest.approx(3.0, abs=1e-9)

    def test_score_interval_duality(self):
        bm, _ = fitted_model(n=30, seed=4)
        rng = np.random.default_rng(5)
        from ksos.predictor import predict

        for _ in range(50):
            x = rng.uniform(-1, 1, size=(1, 1))
            y = rng.uniform(-3, 3)
            q = rng.uniform(-0.5, 1.5)
            s = score(bm, x[0], y)
            m = predict(bm.predictor, x)[0]
            lo = m - eval_band(bm, "low", x)[0] - q
            hi = m + eval_band(bm, "up", x)[0] + q
            assert (s <= q) == (lo <= y <= hi) or abs(s - q) < 1e-12

    def test_vectorized_scores_match(self):
        bm, _ = fitted_model(n=20, seed=6)
        rng = np.random.default_rng(7)
        X = rng.uniform(-1, 1, size=(8, 1))
        y = rng.uniform(-2, 2, size=8)
        vec = scores(bm, X, y)
        np.testing.assert_allclose(vec, [score(bm, X[i], y[i]) for i in range(8)], atol=1e-12)


class TestGapBounds:
    def test_equal_matrices_zero_gap(self):
        rng = np.random.default_rng(8)
        B = rng.standard_normal((5, 5))
        A = B @ B.T
        bm = make_model(A, A.copy())
        bound, observed = gap_bound_operator(bm)
        assert bound == pytest.approx(0.0, abs=1e-9)
        assert observed <= 1e-9
        bound_t, observed_t = gap_bound_trainset(bm)
        assert bound_t == pytest.approx(0.0, abs=1e-9)
        assert observed_t <= 1e-9

    def test_rank_one_difference(self):
        n = 5
        A_low = np.zeros((n, n))
        A_low[0, 0] = 1.0
        bm = make_model(A_low, np.zeros((n, n)))
        bound, observed = gap_bound_operator(bm)
        d = 1
        expected = 2.0 ** (3 + d / 2) * (2 * np.pi) ** (d / 2) * 1.0
        assert bound == pytest.approx(expected)
        assert observed <= bound

    def test_trained_model_bounds_hold(self):
        bm, _ = fitted_model(n=40, seed=9, lam_pen=1e3)
        bound_op, observed_op = gap_bound_operator(bm)
        assert observed_op <= bound_op
        bound_ts, observed_ts = gap_bound_trainset(bm)
        assert observed_ts <= bound_ts

    def test_mismatched_kernels_rejected_for_operator_bound(self):
        X = np.linspace(-1, 1, 4).reshape(-1, 1)
        km_a = kernel_model(X, KernelSpec(0.5))
        km_b = kernel_model(X, KernelSpec(1.5))
        bm = BandModel(
            pair=BandPair(np.eye(4), np.eye(4)),
            predictor=precomputed(X, np.zeros(4)),
            km_low=km_a,
            km_up=km_b,
        )
        with pytest.raises(ParameterError):
            gap_bound_operator(bm)

    def test_fill_in_distance_shrinks_with_density(self):
        sparse = np.linspace(0, 1, 5).reshape(-1, 1)
        dense = np.linspace(0, 1, 50).reshape(-1, 1)
        rho_sparse, approx_s = fill_in_distance(sparse)
        rho_dense, approx_d = fill_in_distance(dense)
        assert rho_dense < rho_sparse
        assert not approx_s and not approx_d
        rho_hi, approx_hi = fill_in_distance(np.random.default_rng(0).uniform(size=(20, 4)))
        assert approx_hi


class TestFitBandModel:
    def test_report_carries_diagnostics(self):
        bm, report = fitted_model(n=20, seed=10)
        assert report.constraint_violation is not None
        assert report.converged

    def test_nonnegative_bands_everywhere(self):
        bm, _ = fitted_model(n=30, seed=11)
        rng = np.random.default_rng(12)
        Xq = rng.uniform(-1.5, 1.5, size=(10_000, 1))
        assert np.min(eval_band(bm, "low", Xq)) >= -1e-10
        assert np.min(eval_band(bm, "up", Xq)) >= -1e-10
