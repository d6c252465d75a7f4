"""Numeric substrate: tensors, autodiff, optimizer, kernels.

Tensors are contiguous row-major float arrays (32-bit for training, 64-bit
for tests and gradient oracles). The gradient contract is checked against
central finite differences in the test suite and by the `gradcheck` CLI
command.
"""

from .autodiff import (
    ACTIVATIONS,
    Tensor,
    add,
    backward,
    concat,
    default_dtype,
    dotv,
    dropout,
    elementwise,
    exp,
    gather_rows,
    grad_enabled,
    identity,
    linear,
    log,
    matvec,
    mean,
    mul,
    no_grad,
    precision,
    relu,
    reshape,
    rowdot,
    set_default_dtype,
    set_finite_checks,
    sigmoid,
    slice_cols,
    slice_rows,
    sqrt,
    square,
    sum_,
    tanh,
    tensor,
)
from .backend import backend_name, kernels
from .gradcheck import check_gradients
from .params import AdamConfig, Parameter, ParameterStore, adam_step

__all__ = [
    "ACTIVATIONS",
    "AdamConfig",
    "Parameter",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "add",
    "backend_name",
    "backward",
    "check_gradients",
    "concat",
    "default_dtype",
    "dotv",
    "dropout",
    "elementwise",
    "exp",
    "gather_rows",
    "grad_enabled",
    "identity",
    "kernels",
    "linear",
    "log",
    "matvec",
    "mean",
    "mul",
    "no_grad",
    "precision",
    "relu",
    "reshape",
    "rowdot",
    "set_default_dtype",
    "set_finite_checks",
    "sigmoid",
    "slice_cols",
    "slice_rows",
    "sqrt",
    "square",
    "sum_",
    "tanh",
    "tensor",
]
