"""Gated recurrent one-step predictor, written directly on numpy.

The cell consumes the previous measurement x_{t-1} and carries all other
context in its hidden state:

    z = sigmoid(Wz x + Uz h + bz)        update gate (keeps old state)
    r = sigmoid(Wr x + Ur h + br)        reset gate
    c = tanh(Wc x + Uc (r * h) + bc)     candidate state
    h' = z * h + (1 - z) * c
    prediction = Wo h' + bo

backward() replays a cached forward pass and accumulates exact gradients
for every weight, so training needs no autodiff framework.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ShapeError
from ..numerics import make_rng

PARAM_FIELDS = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r",
                "w_c", "u_c", "b_c", "w_o", "b_o")


class GruModel:
    kind = "gru"
    min_context = 1

    def __init__(self, n_sensors: int, hidden_size: int = 32, seed: int = 0):
        self.n_sensors = n_sensors
        self.hidden_size = hidden_size
        rng = make_rng(seed)
        s, h = n_sensors, hidden_size

        def init(rows, cols, fan_in):
            a = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-a, a, (rows, cols))

        for gate in ("z", "r", "c"):
            setattr(self, f"w_{gate}", init(h, s, s))
            setattr(self, f"u_{gate}", init(h, h, h))
            setattr(self, f"b_{gate}", np.zeros(h))
        self.w_o = init(s, h, h)
        self.b_o = np.zeros(s)

    # -- parameter plumbing -------------------------------------------------

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

    # -- forward ------------------------------------------------------------

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.hidden_size)

    def step(self, x: np.ndarray, h: np.ndarray):
        """Consume one measurement, return (prediction, new hidden state)."""
        z = expit(self.w_z @ x + self.u_z @ h + self.b_z)
        r = expit(self.w_r @ x + self.u_r @ h + self.b_r)
        c = np.tanh(self.w_c @ x + self.u_c @ (r * h) + self.b_c)
        h_new = z * h + (1.0 - z) * c
        return self.w_o @ h_new + self.b_o, h_new

    def forward(self, inputs: np.ndarray, h0: np.ndarray):
        """Run a (S, T) input block; returns predictions, last h, cache."""
        s, t = inputs.shape
        if s != self.n_sensors:
            raise ShapeError(f"inputs have {s} channels, model has {self.n_sensors}")
        hh = self.hidden_size
        cache = {
            "x": inputs,
            "h_prev": np.empty((hh, t)), "z": np.empty((hh, t)),
            "r": np.empty((hh, t)), "c": np.empty((hh, t)), "h": np.empty((hh, t)),
        }
        preds = np.empty((s, t))
        h = h0
        for k in range(t):
            x = inputs[:, k]
            z = expit(self.w_z @ x + self.u_z @ h + self.b_z)
            r = expit(self.w_r @ x + self.u_r @ h + self.b_r)
            c = np.tanh(self.w_c @ x + self.u_c @ (r * h) + self.b_c)
            cache["h_prev"][:, k] = h
            h = z * h + (1.0 - z) * c
            cache["z"][:, k], cache["r"][:, k], cache["c"][:, k] = z, r, c
            cache["h"][:, k] = h
            preds[:, k] = self.w_o @ h + self.b_o
        return preds, h, cache

    # -- backward -----------------------------------------------------------

    def backward(self, cache: dict, dpreds: np.ndarray,
                 dh_last: np.ndarray | None = None):
        """Backprop through a cached forward pass.

        dpreds is dLoss/dpredictions for the same block. Returns a dict of
        gradients keyed like the parameters, plus dLoss/dh0.
        """
        t = dpreds.shape[1]
        grads = {name: np.zeros_like(getattr(self, name)) for name in PARAM_FIELDS}
        dh = np.zeros(self.hidden_size) if dh_last is None else dh_last.copy()
        for k in range(t - 1, -1, -1):
            x = cache["x"][:, k]
            h_prev = cache["h_prev"][:, k]
            z, r, c = cache["z"][:, k], cache["r"][:, k], cache["c"][:, k]
            dy = dpreds[:, k]
            grads["w_o"] += np.outer(dy, cache["h"][:, k])
            grads["b_o"] += dy
            dh = dh + self.w_o.T @ dy

            dz = dh * (h_prev - c)
            dc = dh * (1.0 - z)
            dh_prev = dh * z

            da_c = dc * (1.0 - c * c)
            grads["w_c"] += np.outer(da_c, x)
            grads["u_c"] += np.outer(da_c, r * h_prev)
            grads["b_c"] += da_c
            drh = self.u_c.T @ da_c
            dr = drh * h_prev
            dh_prev = dh_prev + drh * r

            da_z = dz * z * (1.0 - z)
            grads["w_z"] += np.outer(da_z, x)
            grads["u_z"] += np.outer(da_z, h_prev)
            grads["b_z"] += da_z
            dh_prev = dh_prev + self.u_z.T @ da_z

            da_r = dr * r * (1.0 - r)
            grads["w_r"] += np.outer(da_r, x)
            grads["u_r"] += np.outer(da_r, h_prev)
            grads["b_r"] += da_r
            dh_prev = dh_prev + self.u_r.T @ da_r

            dh = dh_prev
        return grads, dh

    def flat_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[n].ravel() for n in PARAM_FIELDS])
