"""Deterministic minibatch training for both predictor kinds.

Minibatches are contiguous time slices (no shuffling). For the recurrent
model the hidden state is carried across batch boundaries inside an
epoch but gradients never cross them (truncated backprop); the state is
reset at each epoch start. One Adam optimizer acts on the flattened
parameter vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, TrainingError
from ..numerics import AdamState, adam_step
from .ffnn import FfnnModel, build_windows
from .gru import GruModel
from .losses import loss_and_grad, mse_loss


@dataclass
class TrainConfig:
    epochs: int = 8
    batch_size: int = 110
    lr: float = 0.001
    lam: float = 0.0
    target_sensor: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")

    @property
    def mode(self) -> str:
        if self.lam == 0.0:
            return "none"
        return "targeted" if self.target_sensor is not None else "full"

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "lam": self.lam,
                "target_sensor": self.target_sensor, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainResult:
    model: object
    history: list[dict] = field(default_factory=list)


def _check(value: float, epoch: int, batch: int) -> float:
    if not np.isfinite(value):
        raise TrainingError(f"loss diverged at epoch {epoch}, batch {batch}")
    return value


def _eval_split(model, values: np.ndarray, cfg: TrainConfig) -> tuple[float, float]:
    """(mse, penalty term) on a split; covariance over the whole split."""
    preds, targets = _full_predictions(model, values)
    mse = mse_loss(targets, preds)
    total, _ = loss_and_grad(targets, preds, cfg.lam, cfg.mode,
                             cfg.target_sensor, want_grad=False)
    return mse, total - mse


def _full_predictions(model, values: np.ndarray):
    if isinstance(model, FfnnModel):
        w = model.window
        u = build_windows(values, w, values.shape[1], w)
        preds, _ = model.forward_windows(u)
        return preds, values[:, w:]
    preds, _, _ = model.forward(values[:, :-1], model.initial_state())
    return preds, values[:, 1:]


def train(model, train_values: np.ndarray, val_values: np.ndarray,
          config: TrainConfig) -> TrainResult:
    """Fit the model in place; returns it with a per-epoch loss history."""
    n = train_values.shape[1]
    first = model.min_context
    if n < first + config.batch_size:
        raise ConfigError(f"training split of {n} samples is too short for "
                          f"batch_size {config.batch_size}")
    adam = AdamState.init(model.get_flat().size, lr=config.lr)
    recurrent = isinstance(model, GruModel)
    history: list[dict] = []

    for epoch in range(config.epochs):
        h = model.initial_state() if recurrent else None
        batch_losses, batch_mses = [], []
        for bi, b0 in enumerate(range(first, n, config.batch_size)):
            b1 = min(b0 + config.batch_size, n)
            if b1 - b0 < 2:
                break  # covariance needs at least two samples
            targets = train_values[:, b0:b1]
            if recurrent:
                inputs = train_values[:, b0 - 1:b1 - 1]
                preds, h_last, cache = model.forward(inputs, h)
            else:
                u = build_windows(train_values, b0, b1, model.window)
                preds, cache = model.forward_windows(u)
            loss, dpreds = loss_and_grad(targets, preds, config.lam,
                                         config.mode, config.target_sensor)
            _check(loss, epoch, bi)
            if recurrent:
                grads, _ = model.backward(cache, dpreds)
            else:
                grads = model.backward(cache, dpreds)
            flat = adam_step(model.get_flat(), model.flat_grads(grads), adam)
            if not np.all(np.isfinite(flat)):
                raise TrainingError(f"parameters diverged at epoch {epoch}, batch {bi}")
            model.set_flat(flat)
            if recurrent:
                h = h_last
            batch_losses.append(loss)
            batch_mses.append(mse_loss(targets, preds))
        val_mse, val_pen = _eval_split(model, val_values, config)
        history.append({
            "epoch": epoch,
            "train_total": float(np.mean(batch_losses)),
            "train_mse": float(np.mean(batch_mses)),
            "val_mse": val_mse,
            "val_penalty_term": val_pen,
            "val_total": val_mse + val_pen,
        })
    return TrainResult(model, history)
