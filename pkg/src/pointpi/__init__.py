"""Joint point and prediction-interval forecasting trained with two-objective MGDA."""

from .diffcore import ParameterSet, Tape, Tensor
from .losses import BarrierState, LossConfig, pi_loss, pinball_loss, point_loss
from .metrics import MetricReport, evaluate
from .mgda import min_norm_weights
from .model import ModelConfig, init_params, load_checkpoint, predict, save_checkpoint
from .trainer import TrainConfig, TrainReport, train

__all__ = [
    "BarrierState", "LossConfig", "MetricReport", "ModelConfig", "ParameterSet", "Tape", "Tensor",
    "TrainConfig", "TrainReport", "evaluate", "init_params", "load_checkpoint", "min_norm_weights",
    "pi_loss", "pinball_loss", "point_loss", "predict", "save_checkpoint", "train",
]
