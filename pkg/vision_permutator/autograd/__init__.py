"""
Tensor arithmetic, reverse-mode autodiff and the finite-difference oracle.
"""
from vision_permutator.autograd.tensor import (
    DEFAULT_DTYPE,
    Tape,
    Tensor,
    add,
    erf,
    exp,
    get_num_workers,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    permute,
    reciprocal,
    reshape,
    scale,
    select,
    set_num_workers,
    sqrt,
    sub,
)
from vision_permutator.autograd.tensor import sum as reduce_sum
from vision_permutator.autograd.gradcheck import GradcheckReport, gradcheck, gradcheck_params

__all__ = [
    "DEFAULT_DTYPE",
    "GradcheckReport",
    "Tape",
    "Tensor",
    "add",
    "erf",
    "exp",
    "get_num_workers",
    "gradcheck",
    "gradcheck_params",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "permute",
    "reciprocal",
    "reduce_sum",
    "reshape",
    "scale",
    "select",
    "set_num_workers",
    "sqrt",
    "sub",
]
