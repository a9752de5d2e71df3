"""Minimal reverse-mode autodiff over dense numpy arrays."""

from .tensor import Tensor, as_tensor, backward, no_grad, grad_enabled
from . import ops
from .ops import (add, sub, mul, div, neg, power, exp, log, sin, cos, sqrt, maximum, relu,
                  clamp, reshape, transpose, concat, stack, pad, matmul, where)
from .conv import conv, conv_transpose, conv2d, conv3d, conv2d_transpose, conv3d_transpose, same_padding
from .functional import (prelu, sigmoid, elu, fully_connected, dropout, mse, bce, grid_sample3d)
from .optim import AdamConfig, ParamStore, adam_step
from .gradcheck import grad_check
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Tensor", "as_tensor", "backward", "no_grad", "grad_enabled", "ops",
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sin", "cos", "sqrt",
    "maximum", "relu", "clamp", "reshape", "transpose", "concat", "stack", "pad", "matmul",
    "where", "conv", "conv_transpose", "conv2d", "conv3d", "conv2d_transpose",
    "conv3d_transpose", "same_padding", "prelu", "sigmoid", "elu", "fully_connected",
    "dropout", "mse", "bce", "grid_sample3d", "AdamConfig", "ParamStore", "adam_step",
    "grad_check", "save_checkpoint", "load_checkpoint",
]
