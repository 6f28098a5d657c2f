from .engine import (
    Tensor, add, broadcast_to, clamp, concat, conv2d, conv_plane, index, l1_loss, linear,
    log, max, mean, mul, no_grad, permute, relu, reshape, scalar_mul, sigmoid, sub, sum, tensor,
)
from .nn import Conv, Conv2dLayer, Linear, Module, ModuleList, Parameter
from .optim import Adam, AdamState, OneCycleSchedule, adam_step, clip_params, onecycle_lr
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "add", "broadcast_to", "clamp", "concat", "conv2d", "conv_plane", "index", "l1_loss",
    "linear", "log", "max", "mean", "mul", "no_grad", "permute", "relu", "reshape", "scalar_mul",
    "sigmoid", "sub", "sum", "tensor", "Conv", "Conv2dLayer", "Linear", "Module", "ModuleList",
    "Parameter", "Adam", "AdamState", "OneCycleSchedule", "adam_step", "clip_params", "onecycle_lr",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
]
