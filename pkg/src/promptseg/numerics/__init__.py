"""Minimal dense-tensor arithmetic with reverse-mode differentiation."""

from .fileio import bytes_to_tensor, quantize32, read_ten, tensor_to_bytes, write_ten
from .tape import GradTape, Var, grad
from .tensor import (Tensor, avg_pool_region, full, matmul, normalize,
                     resize_bilinear, sigmoid, softmax, tensor, zeros)

__all__ = [
    "Tensor", "tensor", "zeros", "full",
    "matmul", "normalize", "sigmoid", "softmax",
    "avg_pool_region", "resize_bilinear",
    "GradTape", "Var", "grad",
    "read_ten", "write_ten", "tensor_to_bytes", "bytes_to_tensor", "quantize32",
]
