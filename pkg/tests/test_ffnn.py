import numpy as np
import pytest

from sfdsfi.errors import ShapeError
from sfdsfi.numerics import finite_diff_grad
from sfdsfi.predictor import FfnnModel, build_windows
from sfdsfi.predictor.losses import loss_and_grad


def test_build_windows_lag_major_layout():
    values = np.array([[10.0, 11.0, 12.0, 13.0],
                       [20.0, 21.0, 22.0, 23.0]])
    u = build_windows(values, 2, 4, window=2)
    # column for t=2 stacks x_{t-1} then x_{t-2}
    assert np.array_equal(u[:, 0], [11.0, 21.0, 10.0, 20.0])
    assert np.array_equal(u[:, 1], [12.0, 22.0, 11.0, 21.0])


def test_build_windows_requires_context():
    with pytest.raises(ShapeError):
        build_windows(np.zeros((2, 10)), 1, 5, window=2)


def test_zero_weights_output_is_bias():
    model = FfnnModel(3, window=2, hidden_size=4, seed=0)
    flat = np.zeros(model.get_flat().size)
    model.set_flat(flat)
    u = np.random.default_rng(0).normal(size=(6, 5))
    preds, _ = model.forward_windows(u)
    assert np.array_equal(preds, np.zeros((3, 5)))

    # now pin the output bias and check it passes straight through
    model.b2 = np.array([1.5, -2.0, 0.25])
    preds, _ = model.forward_windows(u)
    assert np.allclose(preds, np.tile(model.b2[:, None], (1, 5)))


def test_window_content_matters():
    model = FfnnModel(2, window=3, hidden_size=5, seed=1)
    u = np.random.default_rng(3).normal(size=(6, 1))
    base, _ = model.forward_windows(u)
    swapped = u.copy()
    swapped[[0, 2]] = swapped[[2, 0]]  # swap lag-1 and lag-2 of sensor 0
    out, _ = model.forward_windows(swapped)
    assert not np.allclose(base, out)


def test_streaming_step_matches_batched_windows():
    model = FfnnModel(2, window=3, hidden_size=4, seed=2)
    rng = np.random.default_rng(5)
    values = rng.normal(size=(2, 10))

    state = model.initial_state()
    stream = {}
    for t in range(10):
        pred, state = model.step(values[:, t], state)
        if pred is not None:
            stream[t + 1] = pred  # prediction targets the next sample

    u = build_windows(values, 3, 10, window=3)
    batched, _ = model.forward_windows(u)
    for k, t in enumerate(range(3, 10)):
        assert np.allclose(stream[t], batched[:, k], atol=1e-14)


def test_no_prediction_before_window_filled():
    model = FfnnModel(2, window=4, hidden_size=3, seed=0)
    state = model.initial_state()
    for t in range(3):
        pred, state = model.step(np.zeros(2), state)
        assert pred is None


def test_gradient_matches_finite_differences():
    model = FfnnModel(3, window=2, hidden_size=4, seed=7)
    rng = np.random.default_rng(11)
    values = rng.normal(size=(3, 9))
    u = build_windows(values, 2, 9, window=2)
    targets = values[:, 2:]

    def total(flat):
        m = FfnnModel(3, window=2, hidden_size=4, seed=7)
        m.set_flat(flat)
        preds, _ = m.forward_windows(u)
        loss, _ = loss_and_grad(targets, preds, 0.0, "none", want_grad=False)
        return loss

    preds, cache = model.forward_windows(u)
    _, dpreds = loss_and_grad(targets, preds, 0.0, "none")
    grads = model.backward(cache, dpreds)
    analytic = model.flat_grads(grads)
    numeric = finite_diff_grad(total, model.get_flat())
    denom = np.maximum(np.abs(numeric), 1e-8)
    assert np.max(np.abs(analytic - numeric) / denom) < 1e-6
