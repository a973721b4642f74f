"""Autodiff engine, LSTM allocator and optimizer."""

from .autodiff import Tape, Var
from .model import forward, forward_batch, init_params, load_checkpoint, save_checkpoint
from .optim import OptimizerState, adam_step, cosine_lr

__all__ = [
    "Tape",
    "Var",
    "forward",
    "forward_batch",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "OptimizerState",
    "adam_step",
    "cosine_lr",
]
