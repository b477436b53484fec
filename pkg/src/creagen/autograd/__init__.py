"""Minimal reverse-mode autodiff engine on top of numpy."""

from . import functional
from .conv import batch_norm, conv2d, conv_transpose2d, conv_output_size, conv_transpose_output_size
from .gradcheck import GradCheckReport, NondeterministicFunction, grad_check
from .tensor import BackwardError, ComputationRecord, Tensor, backward, make_op, record

__all__ = [
    "BackwardError",
    "ComputationRecord",
    "GradCheckReport",
    "NondeterministicFunction",
    "Tensor",
    "backward",
    "batch_norm",
    "conv2d",
    "conv_output_size",
    "conv_transpose2d",
    "conv_transpose_output_size",
    "functional",
    "grad_check",
    "make_op",
    "record",
]
