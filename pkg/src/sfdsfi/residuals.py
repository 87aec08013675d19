"""Residual statistics: per-channel residuals, their 2-norm, a Gaussian
KDE of healthy norms, and false-alarm threshold calibration.

The norm of a residual vector is nonnegative, so the KDE reflects every
kernel at zero; the fitted density integrates to one on [0, inf) and the
survival function has a closed form in terms of the normal CDF, which
calibrate_threshold inverts by bisection.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import CalibrationError, ConfigError, ShapeError
from .predictor.rollout import PredictionRun, predict_series


class DriftWarning(UserWarning):
    """Healthy residual norms show a non-stationary trend."""


def residual(measured: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    measured = np.asarray(measured, float)
    predicted = np.asarray(predicted, float)
    if measured.shape != predicted.shape:
        raise ShapeError(f"measured {measured.shape} vs predicted {predicted.shape}")
    return measured - predicted


def residual_norm(r: np.ndarray) -> np.ndarray:
    """Column-wise 2-norm; one detection statistic per time step."""
    r = np.asarray(r, float)
    if r.ndim == 1:
        return float(np.linalg.norm(r))
    return np.linalg.norm(r, axis=0)


@dataclass
class ResidualStream:
    """Residuals aligned with their source block: column k is index start+k."""

    r: np.ndarray
    norms: np.ndarray
    start: int


def residual_stream(values: np.ndarray, run: PredictionRun) -> ResidualStream:
    end = run.start + run.predictions.shape[1]
    r = residual(values[:, run.start:end], run.predictions)
    return ResidualStream(r, residual_norm(r), run.start)


def silverman_bandwidth(samples: np.ndarray) -> float:
    n = samples.size
    sd = samples.std()
    q75, q25 = np.percentile(samples, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        raise CalibrationError("residual samples have zero spread, cannot fit a density")
    return 0.9 * spread * n ** (-0.2)


@dataclass
class GaussianKde:
    """Gaussian kernels with reflection at zero (support [0, inf))."""

    samples: np.ndarray
    bandwidth: float

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, float))
        out = np.zeros_like(x)
        h, s = self.bandwidth, self.samples
        norm = 1.0 / (s.size * h * np.sqrt(2.0 * np.pi))
        pos = x >= 0
        for i in np.flatnonzero(pos):
            z1 = (x[i] - s) / h
            z2 = (x[i] + s) / h
            out[i] = norm * (np.exp(-0.5 * z1 * z1).sum() + np.exp(-0.5 * z2 * z2).sum())
        return out if out.size > 1 else float(out[0])

    def survival(self, x) -> float:
        """P(R > x) under the fitted density; exact, no quadrature."""
        x = np.asarray(x, float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        h, s = self.bandwidth, self.samples
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            if xi < 0:
                out[i] = 1.0
                continue
            q1 = 1.0 - ndtr((xi - s) / h)
            q2 = 1.0 - ndtr((xi + s) / h)
            out[i] = (q1.sum() + q2.sum()) / s.size
        return float(out[0]) if scalar else out


def fit_kde(samples: np.ndarray, min_samples: int = 100) -> GaussianKde:
    """Fit the reflected KDE with Silverman's bandwidth rule."""
    samples = np.asarray(samples, float).ravel()
    if samples.size < min_samples:
        raise CalibrationError(f"need at least {min_samples} residual samples, "
                               f"got {samples.size}")
    if not np.all(np.isfinite(samples)):
        raise CalibrationError("residual samples contain non-finite values")
    if np.any(samples < 0):
        raise CalibrationError("residual norms cannot be negative")
    return GaussianKde(samples.copy(), silverman_bandwidth(samples))


def calibrate_threshold(kde: GaussianKde, p_fa: float, tol: float = 1e-4,
                        max_iter: int = 500) -> float:
    """Threshold gamma with survival(gamma) = p_fa, solved by bisection."""
    if not 0.0 < p_fa < 1.0:
        raise ConfigError(f"p_fa must be in (0, 1), got {p_fa}")
    tol = min(tol, 0.1 * p_fa)
    lo = 0.0
    hi = float(kde.samples.max() + 10.0 * kde.bandwidth)
    while kde.survival(hi) > p_fa:
        hi *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        sv = kde.survival(mid)
        if abs(sv - p_fa) <= tol:
            return mid
        if sv > p_fa:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"threshold search did not reach |survival - {p_fa}| <= {tol}")


def samples_digest(samples: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(samples, float).tobytes()).hexdigest()


@dataclass
class ResidualProfile:
    """Frozen healthy-residual statistics plus the calibrated threshold."""

    kde: GaussianKde
    gamma: float
    p_fa: float

    def survival(self, x):
        return self.kde.survival(x)

    def to_dict(self) -> dict:
        return {
            "samples": self.kde.samples.tolist(),
            "samples_sha256": samples_digest(self.kde.samples),
            "bandwidth": self.kde.bandwidth,
            "gamma": self.gamma,
            "p_fa": self.p_fa,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualProfile":
        samples = np.asarray(d["samples"], float)
        if samples_digest(samples) != d["samples_sha256"]:
            raise ConfigError("residual profile is corrupt: sample digest mismatch")
        return cls(GaussianKde(samples, float(d["bandwidth"])),
                   float(d["gamma"]), float(d["p_fa"]))


def drift_check(norms: np.ndarray, rel_tol: float = 0.5) -> None:
    """Warn (never fail) when the rolling mean of healthy norms drifts."""
    n = norms.size
    win = max(n // 5, 10)
    if n < 2 * win:
        return
    kernel = np.ones(win) / win
    rolling = np.convolve(norms, kernel, mode="valid")
    center = norms.mean()
    if center > 0 and (rolling.max() - rolling.min()) / center > rel_tol:
        warnings.warn("healthy residual norms drift over the calibration split; "
                      "the threshold may be miscalibrated", DriftWarning,
                      stacklevel=2)


def calibrate_profile(model, values: np.ndarray, p_fa: float,
                      min_samples: int = 100) -> ResidualProfile:
    """Open-loop residual norms on a healthy split -> KDE -> threshold."""
    run = predict_series(model, values)
    stream = residual_stream(values, run)
    drift_check(stream.norms)
    kde = fit_kde(stream.norms, min_samples=min_samples)
    gamma = calibrate_threshold(kde, p_fa)
    return ResidualProfile(kde, gamma, p_fa)
