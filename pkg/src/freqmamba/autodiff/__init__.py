"""Minimal reverse-mode autodiff over numpy float64 arrays."""

from . import nn, ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn import conv1d, conv3d, embedding, group_norm, layer_norm, linear, timestep_embedding
from .ops import DimensionError, silu, swish
from .optim import AdamState, TrainingError, adam_step
from .tensor import Node, Tape, Tensor, as_tensor

__all__ = [
    "Tensor", "Tape", "Node", "as_tensor", "ops", "nn",
    "linear", "conv1d", "conv3d", "group_norm", "layer_norm", "silu", "swish",
    "embedding", "timestep_embedding",
    "AdamState", "adam_step", "TrainingError", "DimensionError",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
