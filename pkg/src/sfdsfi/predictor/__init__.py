from .ffnn import FfnnModel, build_windows
from .gru import GruModel
from .losses import (disentangle_loss, loss_and_grad, mse_loss, offdiag_abs_sum,
                     prediction_covariance, targeted_loss, total_loss)
from .rollout import PredictionRun, predict_series
from .training import TrainConfig, TrainResult, train

__all__ = [
    "FfnnModel", "GruModel", "PredictionRun", "TrainConfig", "TrainResult",
    "build_windows", "disentangle_loss", "loss_and_grad", "mse_loss",
    "offdiag_abs_sum", "prediction_covariance", "predict_series",
    "targeted_loss", "total_loss", "train",
]
