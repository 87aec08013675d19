"""Low-level numeric kernels: dense products, Adam, seeded RNG streams,
and a central-difference gradient oracle used by the test suite.

Everything runs in float64. Random state is numpy's PCG64; a single
integer seed plus a short label deterministically derives every stream
used by the pipeline, so reruns are bit-for-bit reproducible.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator seeded with `seed`."""
    return np.random.default_rng(seed)


def labeled_rng(seed: int, label: str) -> np.random.Generator:
    """Derive an independent stream from (seed, label).

    The label is folded in through crc32 so distinct pipeline stages
    (data generation, coin flips, sweeps) never share a stream.
    """
    return np.random.default_rng(np.random.SeedSequence((seed, zlib.crc32(label.encode()))))


def as_matrix(a, name: str = "operand") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Dense matrix product with explicit conformance checking."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite values")
    return arr


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]

    @classmethod
    def init(cls, n: int, lr: float = 0.001, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                   m=np.zeros(n), v=np.zeros(n))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One Adam update. Mutates `state`, returns the new parameter vector.

    Bias-corrected form: p -= lr * m_hat / (sqrt(v_hat) + eps).
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"params {params.shape} and grads {grads.shape} differ")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericError(f"non-finite gradient at parameter index {bad[0]}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at x.

    O(n) evaluations per coordinate pair; intended as a test oracle for
    hand-written backprop, not for production gradients.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    if not np.all(np.isfinite(grad)):
        raise NumericError("finite differences produced non-finite values")
    return grad
