"""agenet: a small from-scratch deep learning library and an age/gender
prediction pipeline built on it."""

from .tensor import Tensor, conv2d, elementwise, finite_diff, grad_map, matmul

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "conv2d",
    "elementwise",
    "finite_diff",
    "grad_map",
    "matmul",
]
