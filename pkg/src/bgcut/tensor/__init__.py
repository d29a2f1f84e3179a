"""Dense tensor arithmetic with reverse-mode automatic differentiation."""

from bgcut.tensor.autograd import DEFAULT_DTYPE, Function, Tape, Tensor, Variable, check_finite
from bgcut.tensor.losses import l2_loss, one_hot, softmax_ce_loss
from bgcut.tensor.ops import (
    add,
    add_n,
    batch_norm,
    concat_channels,
    conv2d,
    conv2d_transpose,
    crop2d,
    global_avg_pool,
    index_batch,
    max_pool2d,
    pad2d,
    relu,
    reshape,
    scale,
    softmax_channel,
    upsample,
    weighted_sum,
)
from bgcut.tensor.optim import SGD, sgd_step

__all__ = [
    "DEFAULT_DTYPE",
    "Function",
    "SGD",
    "Tape",
    "Tensor",
    "Variable",
    "add",
    "add_n",
    "batch_norm",
    "check_finite",
    "concat_channels",
    "conv2d",
    "conv2d_transpose",
    "crop2d",
    "global_avg_pool",
    "index_batch",
    "l2_loss",
    "max_pool2d",
    "one_hot",
    "pad2d",
    "relu",
    "reshape",
    "scale",
    "sgd_step",
    "softmax_ce_loss",
    "softmax_channel",
    "upsample",
    "weighted_sum",
]
