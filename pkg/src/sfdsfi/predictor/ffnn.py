"""Feed-forward one-step predictor over a sliding window.

The input is the w most recent measurements flattened lag-major
(x_{t-1} block first, then x_{t-2}, ...), pushed through one sigmoid
hidden layer. No prediction is emitted until the window is full.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ShapeError
from ..numerics import make_rng

PARAM_FIELDS = ("w1", "b1", "w2", "b2")


def build_windows(values: np.ndarray, t0: int, t1: int, window: int) -> np.ndarray:
    """Stack lagged columns for targets t in [t0, t1); needs t0 >= window."""
    if t0 < window:
        raise ShapeError(f"first target {t0} has no full window of {window}")
    lags = [values[:, t0 - j:t1 - j] for j in range(1, window + 1)]
    s, t = values.shape[0], t1 - t0
    return np.stack(lags).reshape(window * s, t)


class FfnnModel:
    kind = "ffnn"

    def __init__(self, n_sensors: int, window: int = 8, hidden_size: int = 30,
                 seed: int = 0):
        self.n_sensors = n_sensors
        self.window = window
        self.hidden_size = hidden_size
        rng = make_rng(seed)
        fan1 = n_sensors * window
        self.w1 = rng.uniform(-1, 1, (hidden_size, fan1)) / np.sqrt(fan1)
        self.b1 = np.zeros(hidden_size)
        self.w2 = rng.uniform(-1, 1, (n_sensors, hidden_size)) / np.sqrt(hidden_size)
        self.b2 = np.zeros(n_sensors)

    @property
    def min_context(self) -> int:
        return self.window

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def get_flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in PARAM_FIELDS])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for name in PARAM_FIELDS:
            arr = getattr(self, name)
            nxt = pos + arr.size
            setattr(self, name, vec[pos:nxt].reshape(arr.shape).copy())
            pos = nxt
        if pos != vec.size:
            raise ShapeError(f"flat vector has {vec.size} entries, expected {pos}")

    # -- streaming interface (mirrors the recurrent model) -------------------

    def initial_state(self):
        return np.zeros((self.n_sensors, self.window)), 0

    def step(self, x: np.ndarray, state):
        """Push one measurement; prediction is None until w are buffered."""
        buf, filled = state
        buf = np.roll(buf, 1, axis=1)
        buf[:, 0] = x
        filled = min(filled + 1, self.window)
        if filled < self.window:
            return None, (buf, filled)
        u = buf.T.ravel()
        hid = expit(self.w1 @ u + self.b1)
        return self.w2 @ hid + self.b2, (buf, filled)

    # -- batched training path ----------------------------------------------

    def forward_windows(self, u: np.ndarray):
        """Predict from a (S*w, T) window matrix; returns (preds, cache)."""
        if u.shape[0] != self.n_sensors * self.window:
            raise ShapeError(f"window rows {u.shape[0]} != "
                             f"{self.n_sensors * self.window}")
        hid = expit(self.w1 @ u + self.b1[:, None])
        preds = self.w2 @ hid + self.b2[:, None]
        return preds, {"u": u, "hid": hid}

    def backward(self, cache: dict, dpreds: np.ndarray):
        hid, u = cache["hid"], cache["u"]
        grads = {
            "w2": dpreds @ hid.T,
            "b2": dpreds.sum(axis=1),
        }
        dhid = self.w2.T @ dpreds
        da1 = dhid * hid * (1.0 - hid)
        grads["w1"] = da1 @ u.T
        grads["b1"] = da1.sum(axis=1)
        return grads

    def flat_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[n].ravel() for n in PARAM_FIELDS])
