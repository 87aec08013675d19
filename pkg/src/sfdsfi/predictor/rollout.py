"""Series-level prediction with optional closed-loop feedback.

Any model exposing `n_sensors`, `min_context`, `initial_state()` and
`step(x_prev, state) -> (prediction | None, state)` can be rolled out.
Open loop feeds measured values; closed loop overwrites the listed
channels of the fed-back input with the model's own predictions from
`loop_start` onward, which removes a biased sensor's influence on the
prediction path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass
class PredictionRun:
    """predictions[:, k] estimates values[:, start + k].

    inputs is the series the model actually consumed (equal to the
    measurements except where fed_back marks a closed-loop overwrite).
    """

    predictions: np.ndarray
    start: int
    inputs: np.ndarray
    fed_back: np.ndarray
    hidden: np.ndarray | None = None

    def pred_at(self, t: int) -> np.ndarray:
        return self.predictions[:, t - self.start]

    def slice(self, t0: int, t1: int) -> np.ndarray:
        if t0 < self.start or t1 > self.start + self.predictions.shape[1]:
            raise ConfigError(f"[{t0}, {t1}) outside predicted range "
                              f"[{self.start}, {self.start + self.predictions.shape[1]})")
        return self.predictions[:, t0 - self.start:t1 - self.start]


def predict_series(model, values: np.ndarray, closed_loop=(),
                   loop_start: int | None = None,
                   keep_hidden: bool = False) -> PredictionRun:
    """One-step-ahead predictions over a (S, N) block.

    closed_loop lists the channel indices to feed back; loop_start is the
    first index whose input may be overwritten. With an empty channel
    list the run is plain open loop.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"values must be 2-D, got ndim={values.ndim}")
    s, n = values.shape
    if s != model.n_sensors:
        raise ShapeError(f"series has {s} channels, model has {model.n_sensors}")
    loop = sorted(set(int(c) for c in closed_loop))
    for c in loop:
        if not 0 <= c < s:
            raise ConfigError(f"closed-loop channel {c} outside [0, {s})")
    start = model.min_context
    if n <= start:
        raise ShapeError(f"need more than {start} samples, got {n}")
    if loop:
        if loop_start is None:
            raise ConfigError("closed-loop channels given without a loop_start")
        if not start <= loop_start < n:
            raise ConfigError(f"loop_start {loop_start} outside [{start}, {n})")

    y = values.copy()
    fed = np.zeros((s, n), dtype=bool)
    preds = np.empty((s, n - start))
    hidden = [] if keep_hidden else None
    state = model.initial_state()
    for t in range(1, n):
        pred, state = model.step(y[:, t - 1], state)
        if hidden is not None and isinstance(state, np.ndarray):
            hidden.append(state.copy())
        if pred is None:
            continue
        preds[:, t - start] = pred
        if loop and loop_start is not None and t >= loop_start:
            y[loop, t] = pred[loop]
            fed[loop, t] = True
    hid = np.stack(hidden, axis=1) if hidden else None
    return PredictionRun(preds, start, y, fed, hid)
