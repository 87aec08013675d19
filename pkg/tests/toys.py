"""Hand-checkable stand-in systems used as test oracles.

The linear system x_t = A x_{t-1} + w_t with known A has a closed-form
optimal one-step predictor (multiply by A), so every downstream quantity
(residual distribution, bias estimates, isolation targets) can be computed
independently of the trained models.
"""
from __future__ import annotations

import numpy as np

from sfdsfi.numerics import labeled_rng


class LinearPredictor:
    """Exact one-step predictor for the linear toy system."""

    kind = "linear"
    min_context = 1

    def __init__(self, a: np.ndarray):
        self.a = np.asarray(a, dtype=np.float64)
        self.n_sensors = self.a.shape[0]

    def initial_state(self):
        return None

    def step(self, x, state):
        return self.a @ x, state


def rotation_mix(s: int, spectral_radius: float, seed: int) -> np.ndarray:
    """Stable all-to-all transition matrix: scaled random orthogonal."""
    rng = labeled_rng(seed, "toy-mix")
    q, r = np.linalg.qr(rng.normal(size=(s, s)))
    q *= np.sign(np.diag(r))
    return spectral_radius * q


def shift_mix(s: int, gain: float) -> np.ndarray:
    """Scaled cyclic shift: channel i is predicted from channel i-1.

    Zero self-coupling means a biased sensor never tracks its own bias,
    and the bias leaks into exactly one downstream neighbor at `gain`
    strength, so contribution rankings have a known margin.
    """
    return gain * np.roll(np.eye(s), 1, axis=0)

def simulate_linear(a: np.ndarray, n: int, noise_std: float,
                    seed: int) -> np.ndarray:
    """Roll the system forward from rest; returns an S x n matrix."""
    s = a.shape[0]
    rng = labeled_rng(seed, "toy-path")
    x = np.zeros((s, n))
    for t in range(1, n):
        x[:, t] = a @ x[:, t - 1] + rng.normal(0.0, noise_std, s)
    return x
