"""Reverse-mode autodiff and the 3-D UNet built on it."""
from .checkpoint import load_parameters, save_parameters
from .ops import concat_channels, conv3d, group_norm, leaky_relu, sigmoid, tanh, trilinear_upsample
from .tensor import Tensor, no_grad
from .unet import DESK_SCALE, FULL_SCALE, NetworkConfig, UNet, build_unet, count_parameters

__all__ = [
    "Tensor",
    "no_grad",
    "conv3d",
    "group_norm",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "trilinear_upsample",
    "concat_channels",
    "NetworkConfig",
    "UNet",
    "build_unet",
    "count_parameters",
    "DESK_SCALE",
    "FULL_SCALE",
    "save_parameters",
    "load_parameters",
]
