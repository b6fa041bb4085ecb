from .tensor import (Tensor, add, as_tensor, backward, concat, conv1d, conv_transpose1d,
                     cross_entropy, embedding, gelu, getitem, get_dtype, layer_norm, matmul,
                     mean, mse, mul, precision, relu, reshape, slice_, softmax, sqrt, square,
                     stop_gradient, straight_through, sub, sum_, transpose)
from .optim import Adam, AdamState, adam_step
from .gradcheck import numeric_grad, check_grad

__all__ = [
    "Tensor", "add", "as_tensor", "backward", "concat", "conv1d", "conv_transpose1d",
    "cross_entropy", "embedding", "gelu", "getitem", "get_dtype", "layer_norm", "matmul",
    "mean", "mse", "mul", "precision", "relu", "reshape", "slice_", "softmax", "sqrt",
    "square", "stop_gradient", "straight_through", "sub", "sum_", "transpose",
    "Adam", "AdamState", "adam_step", "numeric_grad", "check_grad",
]
