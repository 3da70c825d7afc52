"""From-scratch neural engine for graph-based attack detection."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import ChebConvLayer, DenseHead, DenseLayer, cheb_conv_forward, dense_head_forward, sigmoid
from .loss import bce_loss, bce_with_logits
from .model import (ArchitectureError, CgcnArch, CgcnModel, FcnArch, FcnModel, build_fcn_baseline,
                    init_model, predict, predict_batch)
from .optim import AdamHyper, AdamState, adam_step
from .train import TrainConfig, TrainHistory, TrainingDiverged, train

__all__ = [
    "ArchitectureError", "AdamHyper", "AdamState", "CgcnArch", "CgcnModel", "ChebConvLayer",
    "CheckpointError", "DenseHead", "DenseLayer", "FcnArch", "FcnModel", "TrainConfig",
    "TrainHistory", "TrainingDiverged", "adam_step", "bce_loss", "bce_with_logits",
    "build_fcn_baseline", "cheb_conv_forward", "dense_head_forward", "init_model",
    "load_checkpoint", "predict", "predict_batch", "save_checkpoint", "sigmoid", "train",
]
