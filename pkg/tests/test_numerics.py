import numpy as np
import pytest

from sfdsfi.errors import NumericError, ShapeError
from sfdsfi.numerics import (AdamState, adam_step, as_matrix, check_finite,
                             finite_diff_grad, labeled_rng, make_rng, matmul)


def test_matmul_matches_triple_loop():
    rng = make_rng(7)
    a = rng.normal(size=(4, 6))
    b = rng.normal(size=(6, 3))
    want = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(6):
                want[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(a, b), want, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_as_matrix_rejects_non_2d():
    with pytest.raises(ShapeError):
        as_matrix(np.ones(3))


def test_check_finite_names_offender():
    with pytest.raises(NumericError):
        check_finite(np.array([1.0, np.nan]), "probe")


def test_adam_single_step_hand_computed():
    # one parameter, one step: m=(1-b1)g, v=(1-b2)g^2, bias-corrected
    # update is exactly -lr * g/(|g| + eps*sqrt(1-b2)) ~ -lr * sign(g)
    state = AdamState.init(1, lr=0.5)
    params = np.array([2.0])
    grads = np.array([3.0])
    out = adam_step(params, grads, state)
    m_hat = 0.1 * 3.0 / (1 - 0.9)
    v_hat = 0.001 * 9.0 / (1 - 0.999)
    want = 2.0 - 0.5 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert out[0] == pytest.approx(want, rel=1e-12)
    assert state.step == 1


def test_adam_two_steps_track_reference():
    # independent reference implementation of the update recurrence
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    state = AdamState.init(2, lr=lr)
    params = np.array([1.0, -1.0])
    m = np.zeros(2)
    v = np.zeros(2)
    ref = params.copy()
    for t in (1, 2):
        g = np.array([0.5, -0.25]) * t
        params = adam_step(params, g, state)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert np.allclose(params, ref, atol=1e-15)


def test_adam_rejects_non_finite_gradient():
    state = AdamState.init(3)
    with pytest.raises(NumericError):
        adam_step(np.zeros(3), np.array([0.0, np.inf, 0.0]), state)


def test_finite_diff_grad_cubic():
    f = lambda x: float(np.sum(x**3))
    x = np.array([1.0, -2.0, 0.5])
    g = finite_diff_grad(f, x)
    assert np.allclose(g, 3 * x**2, atol=1e-8)


def test_make_rng_deterministic():
    assert make_rng(42).normal() == make_rng(42).normal()
    assert make_rng(42).normal() != make_rng(43).normal()


def test_labeled_rng_streams_are_independent():
    a1 = labeled_rng(0, "alpha").normal(size=4)
    a2 = labeled_rng(0, "alpha").normal(size=4)
    b = labeled_rng(0, "beta").normal(size=4)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
