"""Reverse-mode tape, layers, optimizer, gradient checker, checkpoints."""

from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import (
    BN_EPS,
    BN_MOMENTUM,
    LayerParams,
    init_layer,
    layer_bn_relu,
    layer_linear,
    layer_relu,
)
from .tensor import (
    Var,
    add,
    affine,
    as_var,
    batchnorm,
    chamfer_loss,
    concat_affine,
    concat_broadcast,
    concat_lastdim,
    edge_features,
    expand_point_axis,
    gather_rows,
    maxpool_points,
    mean_all,
    mul,
    relu,
    scale,
    softmax_xent,
    sub,
    swd_loss,
)

__all__ = [
    "AdamState",
    "BN_EPS",
    "BN_MOMENTUM",
    "LayerParams",
    "Var",
    "adam_step",
    "add",
    "affine",
    "as_var",
    "batchnorm",
    "chamfer_loss",
    "concat_affine",
    "concat_broadcast",
    "concat_lastdim",
    "edge_features",
    "expand_point_axis",
    "gather_rows",
    "grad_check",
    "init_layer",
    "layer_bn_relu",
    "layer_linear",
    "layer_relu",
    "load_checkpoint",
    "maxpool_points",
    "mean_all",
    "mul",
    "relu",
    "save_checkpoint",
    "scale",
    "softmax_xent",
    "sub",
    "swd_loss",
]
