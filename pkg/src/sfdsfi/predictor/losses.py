"""Training losses: mean squared error plus covariance penalties that
push one-step predictions toward mutually uncorrelated channels.

Penalty modes:
  "none"      L = MSE
  "full"      L = MSE + lam * sum_ij |C_ij| / S^2
  "targeted"  L = MSE + lam * sum_j |C_sj| / S     (one protected sensor s)

C is the sample covariance of the prediction matrix across time. During
training it is computed per minibatch; reported numbers use the full
prediction set.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError

MODES = ("none", "full", "targeted")


def mse_loss(targets: np.ndarray, preds: np.ndarray) -> float:
    """Mean over samples of the squared 2-norm prediction error."""
    if targets.shape != preds.shape:
        raise ShapeError(f"targets {targets.shape} vs preds {preds.shape}")
    diff = preds - targets
    return float((diff * diff).sum() / targets.shape[1])


def prediction_covariance(preds: np.ndarray) -> np.ndarray:
    """Sample covariance (S x S) of predictions across the time axis."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 2:
        raise ShapeError(f"predictions must be 2-D, got ndim={preds.ndim}")
    n = preds.shape[1]
    if n < 2:
        raise ShapeError(f"covariance needs at least 2 samples, got {n}")
    d = preds - preds.mean(axis=1, keepdims=True)
    return (d @ d.T) / (n - 1)


def disentangle_loss(cov: np.ndarray) -> float:
    """Mean absolute covariance entry, diagonal included."""
    s = cov.shape[0]
    return float(np.abs(cov).sum() / (s * s))


def targeted_loss(cov: np.ndarray, sensor: int) -> float:
    """Mean absolute covariance of one sensor's row against all channels."""
    s = cov.shape[0]
    if not 0 <= sensor < s:
        raise ConfigError(f"target sensor {sensor} outside [0, {s})")
    return float(np.abs(cov[sensor]).sum() / s)


def offdiag_abs_sum(cov: np.ndarray) -> float:
    """Sum of |C_ij| off the diagonal; the reported coupling measure."""
    return float(np.abs(cov).sum() - np.abs(np.diag(cov)).sum())


def total_loss(targets: np.ndarray, preds: np.ndarray, lam: float = 0.0,
               mode: str = "none", target_sensor: int | None = None) -> float:
    loss, _ = loss_and_grad(targets, preds, lam, mode, target_sensor,
                            want_grad=False)
    return loss


def loss_and_grad(targets: np.ndarray, preds: np.ndarray, lam: float = 0.0,
                  mode: str = "none", target_sensor: int | None = None,
                  want_grad: bool = True):
    """Total loss and its gradient with respect to the predictions.

    With lam = 0 the result is bitwise equal to mse_loss. The penalty
    gradient follows from d|C|/dC = sign(C) and the centering projector:
    dL/dX = (lam / (n-1)) (G + G^T) D  minus its per-row time mean,
    where D is the centered prediction matrix.
    """
    if mode not in MODES:
        raise ConfigError(f"penalty mode must be one of {MODES}, got {mode!r}")
    if mode == "targeted" and target_sensor is None:
        raise ConfigError("targeted mode needs a target sensor index")
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}")
    if targets.shape != preds.shape:
        raise ShapeError(f"targets {targets.shape} vs preds {preds.shape}")

    s, n = preds.shape
    mse = mse_loss(targets, preds)
    grad = (2.0 / n) * (preds - targets) if want_grad else None

    if lam == 0.0 or mode == "none":
        return mse, grad

    cov = prediction_covariance(preds)
    if mode == "full":
        pen = disentangle_loss(cov)
        g = np.sign(cov) / (s * s)
    else:
        pen = targeted_loss(cov, target_sensor)
        g = np.zeros_like(cov)
        g[target_sensor] = np.sign(cov[target_sensor]) / s
    loss = mse + lam * pen
    if not want_grad:
        return loss, None

    d = preds - preds.mean(axis=1, keepdims=True)
    dpen_dd = (lam / (n - 1)) * ((g + g.T) @ d)
    dpen = dpen_dd - dpen_dd.mean(axis=1, keepdims=True)
    return loss, grad + dpen
