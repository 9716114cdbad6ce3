"""Attention-gated CNN-LSTM forecaster with analytic gradients."""

from .layers import LstmState, attention_scores, conv1d_forward, fuse, lstm_cell, sigmoid
from .network import ForwardTape, attention_branch, backward, forward, loss_and_grad, predict
from .params import (
    ArchConfig,
    ParameterSet,
    init_params,
    load_checkpoint,
    param_count,
    param_layout,
    save_checkpoint,
)

__all__ = [
    "ArchConfig",
    "ForwardTape",
    "LstmState",
    "ParameterSet",
    "attention_branch",
    "attention_scores",
    "backward",
    "conv1d_forward",
    "forward",
    "fuse",
    "init_params",
    "load_checkpoint",
    "loss_and_grad",
    "lstm_cell",
    "param_count",
    "param_layout",
    "predict",
    "save_checkpoint",
    "sigmoid",
]
