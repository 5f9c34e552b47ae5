"""Small-CNN toolkit for 8-class endoscopy image classification.

A numpy tensor core with hand-written backward passes, four compact
backbones (VGG, Inception, Xception and ResNet flavoured), a max-tracking
Adam optimizer, a class-per-directory data pipeline, metrics, a binary
checkpoint format and a command-line front end.
"""
from .architectures import ARCHITECTURES, build_head, build_model
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .graph import ModelGraph
from .metrics import MetricsReport, confusion, per_class_metrics
from .optim import OptimizerState, adam_step, cross_entropy, loss_gradient
from .trainer import TrainConfig, fit, predict, transfer_load

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES",
    "Checkpoint",
    "MetricsReport",
    "ModelGraph",
    "OptimizerState",
    "TrainConfig",
    "adam_step",
    "build_head",
    "build_model",
    "confusion",
    "cross_entropy",
    "fit",
    "load_checkpoint",
    "loss_gradient",
    "per_class_metrics",
    "predict",
    "save_checkpoint",
    "transfer_load",
]
