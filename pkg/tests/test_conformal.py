import numpy as np
import pytest

from ksos.bands import fit_band_model
from ksos.conformal import (
    CalibrationResult,
    calibrate,
    conformal_quantile,
    coverage,
    intervals,
    per_side_coverage,
)
from ksos.datasets import SplitPlan, SyntheticCase, generate, split
from ksos.errors import ParameterError
from ksos.predictor import fit_kernel_ridge
from ksos.solver import TrainSetPenalty
from ksos.spectral import RegParams


def pipeline(seed, n_pre=80, n_cal=400, n_test=400, alpha=0.1, mode="symmetric", case_id=1):
    case = SyntheticCase(case_id)
    ds = generate(case, n_pre + n_cal + n_test, seed=seed)
    pre, cal, test = split(ds, SplitPlan(n_pre, n_cal, n_test, seed=seed))
    pred = fit_kernel_ridge(pre.X, pre.y)
    bm, _ = fit_band_model(
        pre.X,
        pre.y,
        pred,
        theta_low=0.4,
        theta_up=0.4,
        b=1.0,
        reg_low=RegParams(0.0, 1.0),
        reg_up=RegParams(0.0, 1.0),
        penalty=TrainSetPenalty(1.0),
    )
    result = calibrate(bm, cal.X, cal.y, alpha, mode=mode)
    iv = intervals(bm, result, test.X)
    return bm, result, iv, test


class TestConformalQuantile:
    def test_small_m_returns_max(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal(9)
        assert conformal_quantile(s, 0.1) == np.max(s)

    def test_order_statistic_oracle(self):
        s = np.arange(1.0, 11.0)
        assert conformal_quantile(s, 0.5) == 6.0

    def test_insufficient_calibration_data(self):
        assert conformal_quantile(np.arange(4.0), 0.1) == np.inf

    def test_empty_scores(self):
        with pytest.raises(ParameterError):
            conformal_quantile([], 0.1)

    def test_monotone_in_level(self):
        rng = np.random.default_rng(1)
        s = rng.standard_normal(50)
        qs = [conformal_quantile(s, a) for a in (0.5, 0.3, 0.2, 0.1, 0.05)]
        assert all(a <= b for a, b in zip(qs, qs[1:]))

    def test_matches_sorted_oracle_exactly(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            m = rng.integers(1, 60)
            alpha = rng.uniform(0.01, 0.6)
            s = rng.standard_normal(m)
            k = int(np.ceil((1 - alpha) * (m + 1)))
            expected = np.inf if k > m else np.sort(s)[k - 1]
            assert conformal_quantile(s, alpha) == expected


class TestCalibrate:
    def test_negative_quantile_allowed(self):
        # bands generously wide: all calibration scores negative
        bm, result, iv, test = pipeline(seed=3, n_pre=40, n_cal=60, n_test=30)
        wide = CalibrationResult(mode="symmetric", alpha=0.1, m=60, q=result.q)
        assert np.isfinite(wide.q)

    def test_single_calibration_point_infinite(self):
        bm, _, _, test = pipeline(seed=4, n_pre=40, n_cal=60, n_test=30)
        result = calibrate(bm, test.X[:1], test.y[:1], 0.1)
        assert np.isinf(result.q)
        assert result.infinite
        iv = intervals(bm, result, test.X)
        assert coverage(iv, test.y) == 1.0

    def test_asymmetric_levels_sum_to_alpha(self):
        bm, result, _, _ = pipeline(seed=5, n_pre=40, n_cal=100, n_test=30, mode="asymmetric")
        assert result.alpha_low + result.alpha_up == pytest.approx(result.alpha)

    def test_unknown_mode(self):
        bm, _, _, test = pipeline(seed=6, n_pre=40, n_cal=60, n_test=30)
        with pytest.raises(ParameterError):
            calibrate(bm, test.X, test.y, 0.1, mode="sideways")


class TestIntervals:
    def test_degenerate_point_interval(self):
        bm, _, _, test = pipeline(seed=7, n_pre=40, n_cal=60, n_test=20)
        cal = CalibrationResult(mode="symmetric", alpha=0.1, m=1, q=0.0)
        iv = intervals(bm, cal, bm.X_train)
        from ksos.bands import eval_band
        from ksos.predictor import predict

        m = predict(bm.predictor, bm.X_train)
        np.testing.assert_allclose(iv[:, 0], m - eval_band(bm, "low", bm.X_train), atol=1e-12)

    def test_simple_arithmetic(self):
        bm, _, _, _ = pipeline(seed=8, n_pre=40, n_cal=60, n_test=20)
        cal = CalibrationResult(mode="symmetric", alpha=0.1, m=10, q=1.0)
        iv = intervals(bm, cal, bm.X_train)
        from ksos.bands import eval_band
        from ksos.predictor import predict

        m = predict(bm.predictor, bm.X_train)
        f_low = eval_band(bm, "low", bm.X_train)
        f_up = eval_band(bm, "up", bm.X_train)
        np.testing.assert_allclose(iv[:, 0], m - f_low - 1.0, atol=1e-12)
        np.testing.assert_allclose(iv[:, 1], m + f_up + 1.0, atol=1e-12)
        # symmetric-mode width identity
        np.testing.assert_allclose(iv[:, 1] - iv[:, 0], f_low + f_up + 2.0, atol=1e-12)

    def test_crossed_interval_marked_empty(self):
        bm, _, _, _ = pipeline(seed=9, n_pre=40, n_cal=60, n_test=20)
        cal = CalibrationResult(mode="symmetric", alpha=0.1, m=10, q=-100.0)
        iv = intervals(bm, cal, bm.X_train)
        assert np.all(np.isnan(iv))
        assert coverage(iv, np.zeros(len(iv))) == 0.0


class TestCoverage:
    def test_all_inside(self):
        iv = np.array([[0.0, 1.0], [2.0, 3.0]])
        assert coverage(iv, [0.5, 2.5]) == 1.0

    def test_infinite_intervals_cover(self):
        iv = np.array([[-np.inf, np.inf]] * 3)
        assert coverage(iv, [1e9, -1e9, 0.0]) == 1.0

    def test_boundary_counts_covered(self):
        iv = np.array([[0.0, 1.0]])
        assert coverage(iv, [1.0]) == 1.0
        assert coverage(iv, [0.0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            coverage(np.array([[0.0, 1.0]]), [1.0, 2.0])


class TestCoverageGuarantee:
    def test_exchangeable_symmetric_coverage(self):
        alpha = 0.1
        seeds = range(20)
        covs = []
        for seed in seeds:
            _, _, iv, test = pipeline(seed=seed, n_pre=60, n_cal=300, n_test=300, alpha=alpha)
            covs.append(coverage(iv, test.y))
        mean_cov = float(np.mean(covs))
        m = 300
        slack = 2 * np.sqrt(alpha * (1 - alpha) / (m * len(covs)))
        assert mean_cov >= 1 - alpha - slack

    def test_asymmetric_per_side_coverage(self):
        alpha = 0.2
        lows, ups = [], []
        for seed in range(10):
            _, _, iv, test = pipeline(
                seed=seed, n_pre=60, n_cal=300, n_test=300, alpha=alpha, mode="asymmetric"
            )
            lo_cov, up_cov = per_side_coverage(iv, test.y)
            lows.append(lo_cov)
            ups.append(up_cov)
        m = 300
        slack = 3 * np.sqrt(alpha * (1 - alpha) / (m * 10))
        assert np.mean(lows) >= 1 - alpha / 2 - slack
        assert np.mean(ups) >= 1 - alpha / 2 - slack
