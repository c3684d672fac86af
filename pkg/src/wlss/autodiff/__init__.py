"""Minimal reverse-mode automatic differentiation on float64 numpy arrays."""

from .tensor import Tensor, Tape, TapeError, backward, assert_finite
from .optim import AdamState, adam_step
from .checkpoint import (CheckpointError, load_arrays, pack_state, restore_adam,
                         save_arrays)
from .ops import (ShapeError, RunningStats, add, avg_pool2d, batch_norm,
                  bce_loss, concat, conv2d, conv2d_transposed, crop2d, linear,
                  mae_loss, max_over_time, mul, pad2d, relu, reshape, sigmoid,
                  sum_all, transpose)
from . import init

__all__ = [
    "Tensor", "Tape", "TapeError", "backward", "assert_finite",
    "AdamState", "adam_step",
    "CheckpointError", "load_arrays", "pack_state", "restore_adam", "save_arrays",
    "ShapeError", "RunningStats", "add", "avg_pool2d", "batch_norm", "bce_loss",
    "concat", "conv2d", "conv2d_transposed", "crop2d", "linear", "mae_loss",
    "max_over_time", "mul", "pad2d", "relu", "reshape", "sigmoid", "sum_all",
    "transpose", "init",
]
