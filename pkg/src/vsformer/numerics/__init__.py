"""Float64 tensors with reverse-mode autodiff, layers and the Adam optimizer."""

from vsformer.numerics.nn import BatchNorm, FeedForward, Linear, Module, batch_norm
from vsformer.numerics.optim import Adam, AdamState, adam_step
from vsformer.numerics.tensor import (
    Parameter,
    Tensor,
    attention,
    backward,
    concat,
    cross_entropy,
    matmul,
    relu,
    sigmoid,
    softmax,
    softmax_rows,
)

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm",
    "FeedForward",
    "Linear",
    "Module",
    "Parameter",
    "Tensor",
    "adam_step",
    "attention",
    "backward",
    "batch_norm",
    "concat",
    "cross_entropy",
    "matmul",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_rows",
]
