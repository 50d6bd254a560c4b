"""Trainable inverse model: feature sequences -> per-frame events and positions."""

from .network import (
    ARCHITECTURES,
    HUBER_DELTA,
    MODEL_SETTINGS,
    ModelConfig,
    forward,
    grad_check,
    init_params,
    loss_and_grads,
    param_shapes,
    weighted_loss,
)
from .store import load_model, save_model
from .training import (
    EpochRecord,
    FramePrediction,
    InverseModel,
    Normalizer,
    TrainConfig,
    infer,
    setting_configs,
    train,
)

__all__ = [
    "ARCHITECTURES",
    "HUBER_DELTA",
    "MODEL_SETTINGS",
    "ModelConfig",
    "forward",
    "grad_check",
    "init_params",
    "loss_and_grads",
    "param_shapes",
    "weighted_loss",
    "EpochRecord",
    "FramePrediction",
    "InverseModel",
    "Normalizer",
    "TrainConfig",
    "infer",
    "setting_configs",
    "train",
    "load_model",
    "save_model",
]
