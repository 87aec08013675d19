import numpy as np
import pytest

from sfdsfi.errors import ConfigError, ShapeError
from sfdsfi.predictor.losses import (disentangle_loss, loss_and_grad, mse_loss,
                                     offdiag_abs_sum, prediction_covariance,
                                     targeted_loss, total_loss)


def test_mse_basics():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert mse_loss(x, x) == 0.0
    single = np.array([[3.0], [4.0]])
    assert mse_loss(np.zeros((2, 1)), single) == pytest.approx(25.0)


def test_mse_quadratic_homogeneity():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(3, 20))
    p = rng.normal(size=(3, 20))
    base = mse_loss(t, p)
    assert mse_loss(t, t + 2 * (p - t)) == pytest.approx(4 * base, rel=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        mse_loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_covariance_constant_predictions():
    preds = np.ones((3, 10)) * 4.0
    assert np.allclose(prediction_covariance(preds), 0.0)


def test_covariance_tiny_example():
    assert prediction_covariance(np.array([[0.0, 2.0]]))[0, 0] == pytest.approx(2.0)


def test_covariance_matches_two_pass_oracle():
    rng = np.random.default_rng(9)
    preds = rng.normal(size=(4, 50))
    cov = prediction_covariance(preds)
    want = np.zeros((4, 4))
    means = [preds[i].sum() / 50 for i in range(4)]
    for i in range(4):
        for j in range(4):
            acc = 0.0
            for t in range(50):
                acc += (preds[i, t] - means[i]) * (preds[j, t] - means[j])
            want[i, j] = acc / 49
    assert np.allclose(cov, want, atol=1e-10)


def test_covariance_symmetric_psd():
    rng = np.random.default_rng(4)
    cov = prediction_covariance(rng.normal(size=(5, 40)))
    assert np.allclose(cov, cov.T, atol=1e-12)
    assert np.linalg.eigvalsh(cov).min() > -1e-10


def test_covariance_needs_two_samples():
    with pytest.raises(ShapeError):
        prediction_covariance(np.ones((3, 1)))


def test_disentangle_loss_values():
    assert disentangle_loss(np.zeros((3, 3))) == 0.0
    c = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert disentangle_loss(c) == pytest.approx(1.0)


def test_disentangle_scales_with_squared_amplitude():
    rng = np.random.default_rng(2)
    preds = rng.normal(size=(3, 60))
    a = disentangle_loss(prediction_covariance(preds))
    b = disentangle_loss(prediction_covariance(3.0 * preds))
    assert b == pytest.approx(9.0 * a, rel=1e-12)


def test_targeted_loss_values():
    c = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert targeted_loss(c, 0) == pytest.approx(1.0)
    assert targeted_loss(np.zeros((4, 4)), 2) == 0.0
    with pytest.raises(ConfigError):
        targeted_loss(c, 5)


def test_targeted_rows_average_to_full_loss():
    rng = np.random.default_rng(7)
    c = prediction_covariance(rng.normal(size=(5, 30)))
    s = c.shape[0]
    avg = sum(targeted_loss(c, i) for i in range(s)) / s
    assert avg == pytest.approx(disentangle_loss(c), rel=1e-12)


def test_offdiag_abs_sum_excludes_diagonal():
    c = np.array([[5.0, 1.0], [-2.0, 7.0]])
    assert offdiag_abs_sum(c) == pytest.approx(3.0)


def test_total_loss_lambda_zero_bitwise_mse():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(3, 25))
    p = rng.normal(size=(3, 25))
    assert total_loss(t, p, lam=0.0) == mse_loss(t, p)


def test_total_loss_composition():
    rng = np.random.default_rng(6)
    t = rng.normal(size=(4, 30))
    p = rng.normal(size=(4, 30))
    want = mse_loss(t, p) + 0.01 * disentangle_loss(prediction_covariance(p))
    assert total_loss(t, p, lam=0.01, mode="full") == pytest.approx(want, abs=1e-12)


def test_total_loss_uncorrelated_predictions():
    t = np.random.default_rng(3).normal(size=(2, 15))
    p = np.ones((2, 15))  # constant => exactly zero covariance
    assert total_loss(t, p, lam=0.5, mode="full") == mse_loss(t, p)


def test_invalid_mode_and_missing_target():
    t = np.zeros((2, 5))
    with pytest.raises(ConfigError):
        total_loss(t, t, lam=0.1, mode="bogus")
    with pytest.raises(ConfigError):
        total_loss(t, t, lam=0.1, mode="targeted")


@pytest.mark.parametrize("mode,sensor", [("none", None), ("full", None),
                                         ("targeted", 1)])
def test_prediction_gradient_matches_finite_differences(mode, sensor):
    rng = np.random.default_rng(12)
    t = rng.normal(size=(3, 12))
    p0 = rng.normal(size=(3, 12))
    lam = 0.0 if mode == "none" else 0.05
    _, grad = loss_and_grad(t, p0, lam, mode, sensor)

    def f(flat):
        loss, _ = loss_and_grad(t, flat.reshape(3, 12), lam, mode, sensor,
                                want_grad=False)
        return loss

    num = np.zeros(p0.size)
    flat = p0.ravel().copy()
    h = 1e-6
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        num[i] = (f(up) - f(dn)) / (2 * h)
    assert np.allclose(grad.ravel(), num, atol=1e-7)
