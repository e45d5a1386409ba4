"""Minimal reverse-mode autodiff over numpy arrays, plus Adam."""

from .adam import AdamState, adam_step
from .container import load as load_tensors
from .container import save as save_tensors
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    cumsum,
    div,
    exp,
    get_dtype,
    getitem,
    gradients,
    log,
    matmul,
    mean,
    mul,
    neg,
    precision,
    relu,
    reshape,
    set_finite_check,
    set_precision,
    sigmoid,
    log_softmax,
    softmax,
    softplus,
    sub,
    tsum,
)

__all__ = [
    "AdamState", "adam_step", "load_tensors", "save_tensors", "Tensor", "add",
    "as_tensor", "backward", "broadcast_to", "concat", "cumsum", "div", "exp",
    "get_dtype", "getitem", "gradients", "log", "matmul", "mean", "mul", "neg",
    "precision", "relu", "reshape", "set_finite_check", "set_precision",
    "sigmoid", "log_softmax", "softmax", "softplus", "sub", "tsum",
]
