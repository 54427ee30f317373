"""Dense numpy layers with hand-written gradients, Adagrad, and checkpoints."""

from .checkpoint import FormatError, load_checkpoint, save_checkpoint
from .layers import (
    Activation,
    Conv2D,
    ConvTranspose2D,
    Dense,
    LayerParams,
    ShapeError,
    activation,
    conv2d_forward,
    deconv2d_forward,
    dropout,
    fc_forward,
    global_average_pool,
    global_average_pool_backward,
    sigmoid,
    softmax,
    softmax_backward,
)
from .optim import Adagrad, TrainSchedule, adagrad_step

__all__ = [
    "Activation", "Adagrad", "Conv2D", "ConvTranspose2D", "Dense", "FormatError",
    "LayerParams", "ShapeError", "TrainSchedule", "activation", "adagrad_step",
    "conv2d_forward", "deconv2d_forward", "dropout", "fc_forward",
    "global_average_pool", "global_average_pool_backward", "load_checkpoint",
    "save_checkpoint", "sigmoid", "softmax", "softmax_backward",
]
