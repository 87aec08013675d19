import math

import numpy as np
import pytest

from sfdsfi.errors import CalibrationError, ConfigError, ShapeError
from sfdsfi.numerics import labeled_rng, make_rng
from sfdsfi.predictor.rollout import PredictionRun, predict_series
from sfdsfi.residuals import (DriftWarning, GaussianKde, ResidualProfile,
                              calibrate_profile, calibrate_threshold,
                              drift_check, fit_kde, residual, residual_norm,
                              residual_stream, silverman_bandwidth)

from toys import LinearPredictor, rotation_mix, simulate_linear

# |N(0,1)| reference values: P(|Z| > x) = 0.01 at x = Phi^-1(0.995),
# density at the mode is 2*phi(0) = sqrt(2/pi)
FOLDED_Q99 = 2.5758293035489004
FOLDED_MODE_PDF = 0.7978845608028654


def folded_samples(n, seed):
    return np.abs(labeled_rng(seed, "folded").standard_normal(n))


def test_residual_is_measured_minus_predicted():
    r = residual(np.array([[2.0, 3.0]]), np.array([[1.5, 4.0]]))
    assert np.allclose(r, [[0.5, -1.0]])


def test_residual_shape_mismatch():
    with pytest.raises(ShapeError):
        residual(np.zeros((2, 3)), np.zeros((3, 2)))


def test_residual_norm_columnwise():
    r = np.array([[3.0, 0.0], [4.0, 2.0]])
    assert np.allclose(residual_norm(r), [5.0, 2.0])
    assert residual_norm(np.array([3.0, 4.0])) == 5.0


def test_residual_stream_alignment():
    values = np.arange(10.0).reshape(1, 10)
    preds = np.full((1, 7), 2.0)
    run = PredictionRun(preds, start=3, inputs=values,
                        fed_back=np.zeros((1, 10), bool))
    stream = residual_stream(values, run)
    assert stream.start == 3
    assert np.allclose(stream.r, values[:, 3:] - 2.0)
    assert np.allclose(stream.norms, np.abs(values[0, 3:] - 2.0))


def test_silverman_bandwidth_hand_value():
    samples = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    want = 0.9 * min(samples.std(), 2.0 / 1.34) * 5 ** -0.2
    assert silverman_bandwidth(samples) == pytest.approx(want, rel=1e-12)
    assert silverman_bandwidth(samples) == pytest.approx(0.9224939070946869, rel=1e-9)


def test_kde_pdf_matches_explicit_kernel_sum():
    from scipy.stats import norm
    samples = np.array([0.0, 1.0])
    kde = fit_kde(samples, min_samples=1)
    h = kde.bandwidth
    for x in (0.0, 0.4, 1.3):
        want = np.mean(norm.pdf((x - samples) / h) + norm.pdf((x + samples) / h)) / h
        assert kde.pdf(x) == pytest.approx(want, rel=1e-10)
    assert kde.pdf(-0.5) == 0.0


def test_kde_survival_matches_pdf_quadrature():
    samples = folded_samples(400, 3)
    kde = fit_kde(samples)
    xs = np.linspace(1.0, 12.0, 4001)
    pdf = kde.pdf(xs)
    tail = np.trapezoid(pdf, xs)
    assert kde.survival(1.0) == pytest.approx(tail, abs=1e-6)
    assert kde.survival(-1.0) == 1.0


def test_kde_integrates_to_one():
    samples = folded_samples(2000, 4)
    kde = fit_kde(samples)
    xs = np.linspace(0.0, samples.max() + 8 * kde.bandwidth, 3000)
    assert np.trapezoid(kde.pdf(xs), xs) == pytest.approx(1.0, abs=1e-3)


def test_kde_survival_monotone():
    kde = fit_kde(folded_samples(500, 5))
    xs = np.linspace(0.0, 5.0, 50)
    sv = kde.survival(xs)
    assert np.all(np.diff(sv) <= 1e-12)
    assert sv[0] == pytest.approx(1.0, abs=1e-9)


def test_mode_density_folded_normal():
    kde = fit_kde(folded_samples(100_000, 6))
    assert kde.pdf(0.0) == pytest.approx(FOLDED_MODE_PDF, rel=0.10)


def test_threshold_folded_normal_within_two_percent():
    kde = fit_kde(folded_samples(100_000, 7))
    gamma = calibrate_threshold(kde, 0.01)
    assert gamma == pytest.approx(FOLDED_Q99, rel=0.02)


def test_fresh_sample_exceedance():
    kde = fit_kde(folded_samples(100_000, 7))
    gamma = calibrate_threshold(kde, 0.01)
    fresh = folded_samples(100_000, 8)
    rate = float((fresh > gamma).mean())
    assert rate == pytest.approx(0.01, rel=0.30)


def test_calibrate_threshold_validates_p_fa():
    kde = fit_kde(folded_samples(200, 9))
    for bad in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(ConfigError):
            calibrate_threshold(kde, bad)


def test_fit_kde_rejects_bad_samples():
    with pytest.raises(CalibrationError, match="at least"):
        fit_kde(np.ones(10))
    with pytest.raises(CalibrationError, match="non-finite"):
        fit_kde(np.r_[np.ones(200), np.nan])
    with pytest.raises(CalibrationError, match="negative"):
        fit_kde(np.r_[np.ones(200), -1.0])


def test_zero_spread_is_an_error():
    with pytest.raises(CalibrationError, match="zero spread"):
        fit_kde(np.ones(200), min_samples=1)


def test_drift_warning_fires_on_shifted_halves():
    norms = np.r_[np.full(300, 1.0), np.full(300, 3.0)]
    with pytest.warns(DriftWarning):
        drift_check(norms)


def test_drift_check_quiet_on_stationary():
    import warnings
    norms = 1.0 + 0.01 * make_rng(0).standard_normal(600)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        drift_check(norms)


def test_profile_round_trip_and_digest_guard():
    kde = fit_kde(folded_samples(300, 10))
    prof = ResidualProfile(kde, gamma=2.5, p_fa=0.01)
    d = prof.to_dict()
    back = ResidualProfile.from_dict(d)
    assert back.gamma == prof.gamma
    assert back.p_fa == prof.p_fa
    assert np.array_equal(back.kde.samples, kde.samples)
    assert back.kde.bandwidth == kde.bandwidth
    d["samples"][0] += 1e-9
    with pytest.raises(ConfigError, match="digest"):
        ResidualProfile.from_dict(d)


def test_calibrate_profile_linear_toy():
    a = rotation_mix(3, 0.9, seed=11)
    values = simulate_linear(a, 6000, noise_std=0.3, seed=12)
    model = LinearPredictor(a)
    prof = calibrate_profile(model, values, p_fa=0.05)
    run = predict_series(model, values)
    stream = residual_stream(values, run)
    rate = float((stream.norms > prof.gamma).mean())
    assert rate == pytest.approx(0.05, rel=0.30)
    assert prof.p_fa == 0.05
    assert prof.gamma > 0


def test_survival_at_gamma_matches_p_fa():
    kde = fit_kde(folded_samples(50_000, 13))
    gamma = calibrate_threshold(kde, 0.01)
    assert kde.survival(gamma) == pytest.approx(0.01, abs=1e-3)
