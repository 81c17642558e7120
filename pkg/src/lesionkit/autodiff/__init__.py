from .engine import Variable, as_variable, backward, grad_enabled, no_grad
from .functional import (
    add,
    batch_norm,
    bilinear_resize,
    conv2d,
    conv_transpose2d,
    cross_entropy,
    flip,
    global_avg_pool,
    linear,
    log_softmax,
    max_pool2d,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum,
)
from .gradcheck import grad_check
from .state import BatchNormState

transposed_conv2d = conv_transpose2d

__all__ = [
    "BatchNormState", "Variable", "add", "as_variable", "backward", "batch_norm",
    "bilinear_resize", "conv2d", "conv_transpose2d", "cross_entropy", "flip",
    "global_avg_pool", "grad_check", "grad_enabled", "linear", "log_softmax",
    "max_pool2d", "mean", "mul", "no_grad", "relu", "reshape", "sigmoid", "softmax",
    "sub", "sum", "transposed_conv2d",
]
