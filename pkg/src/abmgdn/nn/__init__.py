from .layers import MLP, LayerNorm, LayerSpec, Linear, Module, init_bound, init_weights
from .optim import Adam, AdamState, adam_step
from .tensor import (
    DimensionError,
    Tensor,
    add,
    concat,
    gather_rows,
    is_grad_enabled,
    layer_norm,
    leaky_relu,
    matmul,
    mean_all,
    mse_loss,
    mul,
    no_grad,
    reshape,
    segment_sum,
    sum_all,
)

__all__ = [
    "Adam", "AdamState", "DimensionError", "LayerNorm", "LayerSpec", "Linear", "MLP", "Module",
    "Tensor", "adam_step", "add", "concat", "gather_rows", "init_bound", "init_weights",
    "is_grad_enabled", "layer_norm", "leaky_relu", "matmul", "mean_all", "mse_loss", "mul",
    "no_grad", "reshape", "segment_sum", "sum_all",
]
