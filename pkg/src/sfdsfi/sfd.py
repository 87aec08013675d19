"""Batch-level fault detection: threshold crossings fused with a
randomized K-out-of-M rule.

Each residual norm in a batch of M gives a binary decision
D_t = 1(R_t > gamma). Under the healthy hypothesis the count of ones is
Binomial(M, p_fa), so the smallest K whose tail probability does not
exceed the target batch false-alarm rate alpha gives a conservative
deterministic test; a biased coin on the boundary count K-1 restores the
exact rate:

    alpha1 = P(count >= K)     <= alpha
    alpha2 = P(count >= K-1)   >  alpha
    p_flip = (alpha - alpha1) / (alpha2 - alpha1)

The batch is declared faulty outright when count >= K, by coin flip with
probability p_flip when count == K-1, and healthy otherwise. The
resulting false-alarm rate is exactly alpha.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

H0, H1 = "H0", "H1"


def decide(norm: float, gamma: float) -> int:
    """Single-sample decision: strict exceedance of the threshold."""
    return 1 if norm > gamma else 0


def decide_stream(norms: np.ndarray, gamma: float) -> np.ndarray:
    return (np.asarray(norms, float) > gamma).astype(np.int64)


def binomial_tail(m: int, k: int, p: float) -> float:
    """P(X >= k) for X ~ Binomial(m, p), summed in log space."""
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"p must be in [0, 1], got {p}")
    k = math.ceil(k)
    if k <= 0:
        return 1.0
    if k > m:
        return 0.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    log_terms = []
    lp, lq = math.log(p), math.log1p(-p)
    for i in range(k, m + 1):
        log_c = math.lgamma(m + 1) - math.lgamma(i + 1) - math.lgamma(m - i + 1)
        log_terms.append(log_c + i * lp + (m - i) * lq)
    top = max(log_terms)
    total = math.exp(top) * sum(math.exp(t - top) for t in log_terms)
    # the sum can land a few ulp past 1.0; a probability never should
    return float(min(1.0, total))


def choose_k(m: int, p_fa: float, alpha: float) -> tuple[int, float, float, float]:
    """Smallest K with P(count >= K) <= alpha, plus the coin parameters.

    Returns (k_alpha, p_flip, alpha1, alpha2).
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if not 0.0 <= p_fa < 1.0:
        raise ConfigError(f"p_fa must be in [0, 1), got {p_fa}")
    for k in range(1, m + 1):
        alpha1 = binomial_tail(m, k, p_fa)
        if alpha1 <= alpha:
            alpha2 = binomial_tail(m, k - 1, p_fa)
            if alpha2 == alpha1:
                raise ConfigError(f"degenerate tail at K={k}; cannot randomize")
            p_flip = (alpha - alpha1) / (alpha2 - alpha1)
            return k, min(max(p_flip, 0.0), 1.0), alpha1, alpha2
    raise ConfigError(f"alpha={alpha} unreachable: even K={m} has tail "
                      f"{binomial_tail(m, m, p_fa)}")


@dataclass(frozen=True)
class FusionConfig:
    """Designed K-out-of-M test; build through FusionConfig.design."""

    m: int
    alpha: float
    p_fa: float
    k_alpha: int
    p_flip: float
    alpha1: float
    alpha2: float

    @classmethod
    def design(cls, m: int = 60, p_fa: float = 0.01,
               alpha: float = 0.1) -> "FusionConfig":
        if m < 1:
            raise ConfigError(f"batch size m must be >= 1, got {m}")
        if p_fa > alpha / m:
            # Honoring the per-sample bound would force p_fa <= alpha/M;
            # the shipped defaults violate it, so this only warns.
            warnings.warn(f"p_fa={p_fa} exceeds alpha/M={alpha / m:.3g}; "
                          "batch false-alarm control relies on the coin flip",
                          UserWarning, stacklevel=2)
        k_alpha, p_flip, a1, a2 = choose_k(m, p_fa, alpha)
        return cls(m, alpha, p_fa, k_alpha, p_flip, a1, a2)

    def to_dict(self) -> dict:
        return {"m": self.m, "alpha": self.alpha, "p_fa": self.p_fa,
                "k_alpha": self.k_alpha, "p_flip": self.p_flip,
                "alpha1": self.alpha1, "alpha2": self.alpha2}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        return cls(**d)


@dataclass
class BatchVerdict:
    t_star: int
    count: int
    k_alpha: int
    verdict: str
    used_coin_flip: bool

    def to_dict(self) -> dict:
        return {"t_star": self.t_star, "count": self.count,
                "k_alpha": self.k_alpha, "verdict": self.verdict,
                "used_coin_flip": self.used_coin_flip}


def fuse(decisions: np.ndarray, config: FusionConfig,
         rng: np.random.Generator, t_star: int = 0) -> BatchVerdict:
    """Fuse one batch of single-sample decisions into a verdict.

    Faulty outright at count >= K, coin flip at count == K-1. Adding a
    detection can therefore never turn a faulty verdict healthy.
    """
    decisions = np.asarray(decisions)
    if decisions.size != config.m:
        raise ShapeError(f"batch has {decisions.size} decisions, config m={config.m}")
    count = int(decisions.sum())
    used_coin = False
    if count >= config.k_alpha:
        verdict = H1
    elif count == config.k_alpha - 1:
        used_coin = True
        verdict = H1 if rng.uniform() < config.p_flip else H0
    else:
        verdict = H0
    return BatchVerdict(t_star, count, config.k_alpha, verdict, used_coin)


def estimate_pd_hat(decisions: np.ndarray) -> float:
    """Empirical exceedance rate inside a window."""
    decisions = np.asarray(decisions)
    if decisions.size == 0:
        raise ShapeError("cannot estimate a rate from zero decisions")
    return float(decisions.mean())


def detect_stream(norms: np.ndarray, gamma: float, config: FusionConfig,
                  rng: np.random.Generator, start_index: int = 0) -> list[BatchVerdict]:
    """Slice a norm stream into consecutive batches of M and fuse each.

    start_index is the series index of norms[0]; a trailing partial batch
    is ignored. Verdicts are ordered by batch start.
    """
    norms = np.asarray(norms, float)
    out = []
    for b0 in range(0, norms.size - config.m + 1, config.m):
        decisions = decide_stream(norms[b0:b0 + config.m], gamma)
        out.append(fuse(decisions, config, rng, t_star=start_index + b0))
    return out
