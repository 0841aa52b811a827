"""NumPy CNN-GRU gesture classifier, training, metrics and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import EvalReport, confusion_matrix, evaluate_predictions, per_class_scores
from .model import CnnGru, CnnGruSpec, cross_entropy, log_softmax, numerical_gradient
from .optim import Adam
from .train import (
    TrainConfig,
    TrainResult,
    affine_cost,
    clips_to_arrays,
    conv_cost,
    count_params_flops,
    evaluate,
    gru_cost,
    nearest_centroid,
    train,
    write_loss_curve,
)

__all__ = [
    "Adam",
    "CnnGru",
    "CnnGruSpec",
    "EvalReport",
    "TrainConfig",
    "TrainResult",
    "affine_cost",
    "clips_to_arrays",
    "confusion_matrix",
    "conv_cost",
    "count_params_flops",
    "cross_entropy",
    "evaluate",
    "evaluate_predictions",
    "gru_cost",
    "load_checkpoint",
    "log_softmax",
    "nearest_centroid",
    "numerical_gradient",
    "per_class_scores",
    "save_checkpoint",
    "train",
    "write_loss_curve",
]
