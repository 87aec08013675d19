"""Versioned JSON checkpoints: model weights, normalization statistics,
training configuration, and the calibrated residual profile.

Floats are serialized through repr, so a save/load round trip restores
every parameter bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import NormStats
from .errors import ConfigError
from .predictor.ffnn import FfnnModel
from .predictor.gru import GruModel
from .predictor.training import TrainConfig
from .residuals import ResidualProfile

FORMAT_VERSION = 1


def model_to_dict(model) -> dict:
    d = {"kind": model.kind, "n_sensors": model.n_sensors,
         "hidden_size": model.hidden_size,
         "params": model.get_flat().tolist()}
    if isinstance(model, FfnnModel):
        d["window"] = model.window
    return d


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "gru":
        model = GruModel(d["n_sensors"], d["hidden_size"])
    elif kind == "ffnn":
        model = FfnnModel(d["n_sensors"], d["window"], d["hidden_size"])
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    model.set_flat(np.asarray(d["params"], float))
    return model


@dataclass
class Checkpoint:
    model: object
    stats: NormStats
    train_config: TrainConfig
    profile: ResidualProfile | None = None
    history: list | None = None


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "model": model_to_dict(ckpt.model),
        "norm_stats": ckpt.stats.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "profile": ckpt.profile.to_dict() if ckpt.profile else None,
        "history": ckpt.history,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"checkpoint format {version!r} is not supported "
                          f"(expected {FORMAT_VERSION})")
    profile = doc.get("profile")
    return Checkpoint(
        model=model_from_dict(doc["model"]),
        stats=NormStats.from_dict(doc["norm_stats"]),
        train_config=TrainConfig.from_dict(doc["train_config"]),
        profile=ResidualProfile.from_dict(profile) if profile else None,
        history=doc.get("history"),
    )
