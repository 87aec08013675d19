"""Multi-fault isolation over a post-detection window.

The isolation window holds a block of measurements, the index t_star
where suspicion began, and an integration interval [t_i, t_i + L). The
greedy search ranks sensors (by residual contribution, or by a sparse
bias solve), then tests candidates one at a time: estimate each
candidate set's bias from a closed-loop run that feeds the suspect
channels their own predictions, subtract the estimate, and keep the
candidate only if the corrected data lowers both the detection
probability and the mean residual norm. The loop stops once the window
shows no threshold exceedances or every sensor has been tried, so each
sensor is evaluated at most once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError
from .numerics import AdamState, adam_step
from .predictor.rollout import predict_series
from .residuals import ResidualProfile, residual_stream
from .sfd import FusionConfig, binomial_tail, choose_k, decide_stream


def access(x: np.ndarray, indices) -> np.ndarray:
    """Select rows by index, rejecting duplicates and out-of-range values."""
    x = np.asarray(x)
    idx = list(indices)
    n = x.shape[0]
    for i in idx:
        if not 0 <= i < n:
            raise ConfigError(f"index {i} outside [0, {n})")
    if len(set(idx)) != len(idx):
        raise ConfigError(f"duplicate indices: {idx}")
    return x[idx]


def contribution_scores(resid_block: np.ndarray, signed: bool = False) -> np.ndarray:
    """Per-sensor share of the window's residual mass; sums to one.

    The default aggregates absolute residuals so faults of either sign
    accumulate; signed=True keeps raw sums for diagnostic use.
    """
    r = np.asarray(resid_block, float)
    if r.ndim != 2:
        raise ShapeError(f"residual block must be 2-D, got ndim={r.ndim}")
    per_sensor = r.sum(axis=1) if signed else np.abs(r).sum(axis=1)
    denom = np.abs(r).sum()
    if denom == 0.0:
        raise DegenerateInputError("all-zero residual window has no contributions")
    return per_sensor / denom


def argmax_single(scores: np.ndarray) -> int:
    """Most suspicious sensor; ties break to the lowest index."""
    return int(np.argmax(scores))


@dataclass(frozen=True)
class SfiWindow:
    """Measurement block with suspicion and integration bookmarks.

    Indices are block-local: column t_star is where closed-loop feedback
    begins, [t_i, t_i + length) is the integration interval. Data before
    t_star is trusted as healthy warm-up context.
    """

    values: np.ndarray
    t_star: int
    t_i: int
    length: int

    def __post_init__(self):
        v = np.asarray(self.values, float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ShapeError(f"window values must be 2-D, got ndim={v.ndim}")
        w = v.shape[1]
        if not 0 < self.t_star < self.t_i:
            raise ConfigError(f"need 0 < t_star < t_i, got {self.t_star}, {self.t_i}")
        if self.length < 1 or self.t_i + self.length > w:
            raise ConfigError(f"integration interval [{self.t_i}, "
                              f"{self.t_i + self.length}) overruns block of {w}")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def t_end(self) -> int:
        return self.t_i + self.length


@dataclass
class IterationRecord:
    candidate: int
    accepted: bool
    pd_before: float
    pd_after: float
    rbar_before: float
    rbar_after: float
    delta: list[float]

    def to_dict(self) -> dict:
        return {"candidate": self.candidate, "accepted": self.accepted,
                "pd_before": self.pd_before, "pd_after": self.pd_after,
                "rbar_before": self.rbar_before, "rbar_after": self.rbar_after,
                "delta": self.delta}


@dataclass
class FaultReport:
    """Isolated channels (in acceptance order) with their bias estimates."""

    fault_list: list[int] = field(default_factory=list)
    delta_hat: list[float] = field(default_factory=list)
    iterations: list[IterationRecord] = field(default_factory=list)
    diagnostic: str | None = None

    def to_dict(self) -> dict:
        d = {"fault_list": self.fault_list, "delta_hat": self.delta_hat,
             "iterations": [it.to_dict() for it in self.iterations]}
        if self.diagnostic:
            d["diagnostic"] = self.diagnostic
        return d


def window_k_alpha(window: SfiWindow, fusion: FusionConfig) -> int:
    """K for the window length; reuses the designed K when lengths match."""
    if window.length == fusion.m:
        return fusion.k_alpha
    return choose_k(window.length, fusion.p_fa, fusion.alpha)[0]


def _window_stats(model, values: np.ndarray, window: SfiWindow,
                  profile: ResidualProfile, k_alpha: int):
    """Open-loop (rbar, detection probability, residual block) on values."""
    run = predict_series(model, values)
    stream = residual_stream(values, run)
    sl = slice(window.t_i - stream.start, window.t_end - stream.start)
    norms = stream.norms[sl]
    rbar = float(norms.mean())
    p_hat = float(decide_stream(norms, profile.gamma).mean())
    pd = binomial_tail(window.length, k_alpha, p_hat)
    return rbar, pd, stream.r[:, sl]


def estimate_bias_closedloop(model, window: SfiWindow, fault_list) -> np.ndarray:
    """Bias estimate for each suspect: mean gap between its measurements
    and a prediction path that never consumes those measurements."""
    fl = list(fault_list)
    run = predict_series(model, window.values, closed_loop=fl,
                         loop_start=window.t_star)
    preds = run.slice(window.t_i, window.t_end)
    gaps = access(window.values[:, window.t_i:window.t_end], fl) - access(preds, fl)
    return gaps.mean(axis=1)


def _corrected(values: np.ndarray, t_star: int, fault_list, delta) -> np.ndarray:
    out = values.copy()
    for c, d in zip(fault_list, delta):
        out[c, t_star:] -= d
    return out


def _greedy_core(model, window: SfiWindow, profile: ResidualProfile,
                 fusion: FusionConfig, ranking: np.ndarray) -> FaultReport:
    k_alpha = window_k_alpha(window, fusion)
    rbar, pd, _ = _window_stats(model, window.values, window, profile, k_alpha)
    report = FaultReport()
    if pd == 0.0:
        return report
    order = np.argsort(-ranking, kind="stable")
    fault_list: list[int] = []
    delta_curr: np.ndarray | None = None
    for cand in order:
        if pd == 0.0:
            break
        cand = int(cand)
        trial = fault_list + [cand]
        delta_try = estimate_bias_closedloop(model, window, trial)
        corrected = _corrected(window.values, window.t_star, trial, delta_try)
        rbar_new, pd_new, _ = _window_stats(model, corrected, window, profile, k_alpha)
        accepted = pd_new <= pd and rbar_new < rbar
        report.iterations.append(IterationRecord(
            cand, accepted, pd, pd_new, rbar, rbar_new,
            [float(d) for d in delta_try]))
        if accepted:
            fault_list = trial
            delta_curr = delta_try
            rbar, pd = rbar_new, pd_new
    report.fault_list = fault_list
    report.delta_hat = [] if delta_curr is None else [float(d) for d in delta_curr]
    return report


def greedy_isolation(model, window: SfiWindow, profile: ResidualProfile,
                     fusion: FusionConfig) -> FaultReport:
    """Greedy isolation ranked by residual contribution scores."""
    k_alpha = window_k_alpha(window, fusion)
    rbar, pd, resid = _window_stats(model, window.values, window, profile, k_alpha)
    if pd == 0.0:
        return FaultReport()
    try:
        ranking = contribution_scores(resid)
    except DegenerateInputError as exc:
        return FaultReport(diagnostic=str(exc))
    return _greedy_core(model, window, profile, fusion, ranking)


@dataclass(frozen=True)
class SparseSolveConfig:
    """Adam parameters for the L1-regularized per-sensor bias solve.

    Adam moves each coordinate by about lr per step until it lands, so
    lr * iterations bounds the reachable bias magnitude; the defaults
    cover normalized offsets well past anything the generator injects.
    """

    eta: float = 0.0
    lr: float = 0.25
    iterations: int = 120

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be nonnegative, got {self.eta}")
        if self.lr <= 0 or self.iterations < 1:
            raise ConfigError("sparse solve needs lr > 0 and iterations >= 1")


def sparse_bias(measured: np.ndarray, predicted: np.ndarray,
                config: SparseSolveConfig = SparseSolveConfig()) -> np.ndarray:
    """One bias per sensor minimizing ||(measured - delta) - predicted||^2
    + eta * ||delta||_1, solved with Adam from zero.

    The subgradient of |d| at zero is taken as zero, so untouched
    coordinates stay exactly zero until the data moves them.
    """
    g = np.asarray(measured, float) - np.asarray(predicted, float)
    if g.ndim != 2:
        raise ShapeError(f"bias solve needs 2-D blocks, got ndim={g.ndim}")
    t = g.shape[1]
    delta = np.zeros(g.shape[0])
    adam = AdamState.init(delta.size, lr=config.lr)
    row_sums = g.sum(axis=1)
    for _ in range(config.iterations):
        grad = 2.0 * (t * delta - row_sums) + config.eta * np.sign(delta)
        delta = adam_step(delta, grad, adam)
    return delta


def soft_threshold(x: np.ndarray, thresh: float) -> np.ndarray:
    """Closed-form minimizer of the per-sensor objective (oracle form)."""
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def greedy_isolation_sparse(model, window: SfiWindow, profile: ResidualProfile,
                            fusion: FusionConfig,
                            config: SparseSolveConfig = SparseSolveConfig()) -> FaultReport:
    """Greedy isolation ranked by the magnitude of the sparse bias solve.

    Only the candidate ordering changes; acceptance tests and the
    reported bias estimates still come from closed-loop runs.
    """
    k_alpha = window_k_alpha(window, fusion)
    rbar, pd, _ = _window_stats(model, window.values, window, profile, k_alpha)
    if pd == 0.0:
        return FaultReport()
    run = predict_series(model, window.values)
    preds = run.slice(window.t_i, window.t_end)
    delta_eta = sparse_bias(window.values[:, window.t_i:window.t_end], preds, config)
    return _greedy_core(model, window, profile, fusion, np.abs(delta_eta))
