"""Shared fixtures: the synthetic plant, trained detector/isolator stacks.

Training runs once per session (two GRU fits, about a minute together);
everything downstream reuses the same models so results are comparable
across test modules.
"""
import warnings

import numpy as np
import pytest

from sfdsfi import evaluation as ev
from sfdsfi.dataset import SplitSpec, fit_normalizer, gen_synthetic, split
from sfdsfi.predictor import GruModel, TrainConfig, train
from sfdsfi.residuals import calibrate_profile
from sfdsfi.sfd import FusionConfig

N_SENSORS = 8
N_SAMPLES = 120_000
P_FA = 0.01


@pytest.fixture(scope="session")
def fusion_default() -> FusionConfig:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return FusionConfig.design()


@pytest.fixture(scope="session")
def synth_series():
    return gen_synthetic(N_SENSORS, N_SAMPLES, seed=0)


@pytest.fixture(scope="session")
def splits(synth_series):
    train_raw, val_raw, test_raw = split(synth_series.values, SplitSpec())
    stats = fit_normalizer(train_raw)
    return {
        "train_raw": train_raw,
        "val_raw": val_raw,
        "test_raw": test_raw,
        "stats": stats,
        "train": stats.apply(train_raw),
        "val": stats.apply(val_raw),
        "test": stats.apply(test_raw),
    }


def _fit_stack(splits, fusion, lam: float, seed: int,
               target_sensor=None) -> ev.DetectorStack:
    model = GruModel(N_SENSORS, 32, seed=seed)
    cfg = TrainConfig(lam=lam, seed=seed, target_sensor=target_sensor)
    train(model, splits["train"], splits["val"], cfg)
    profile = calibrate_profile(model, splits["val"], P_FA)
    return ev.DetectorStack(model, splits["stats"], profile, fusion)


@pytest.fixture(scope="session")
def detector_stack(splits, fusion_default) -> ev.DetectorStack:
    """Plain predictor: most accurate residuals, used for detection."""
    return _fit_stack(splits, fusion_default, lam=0.0, seed=1)


@pytest.fixture(scope="session")
def isolator_stack(splits, fusion_default) -> ev.DetectorStack:
    """Decorrelated predictor: less smearing, used for isolation."""
    return _fit_stack(splits, fusion_default, lam=0.01, seed=2)
