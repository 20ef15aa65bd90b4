from . import nn
from . import tensor as ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .params import ParameterStore, adam_step, cosine_lr
from .tensor import DimensionError, Tensor, conv1d_k5, matmul, softmax

__all__ = [
    "DimensionError",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "conv1d_k5",
    "cosine_lr",
    "finite_diff_check",
    "load_checkpoint",
    "matmul",
    "nn",
    "ops",
    "save_checkpoint",
    "softmax",
]
