"""Minimal dense-tensor engine: reverse-mode differentiation on an explicit
tape, the layers the generator needs, and the Adam optimizer."""

from .adam import Adam, adam_step
from .layers import Embedding, GRUCell, Linear, gru_step, uniform_init
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    current_tape,
    embedding,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax_cross_entropy,
    split,
    sub,
    tanh,
    tmean,
    tsum,
)

__all__ = [
    "Adam",
    "Embedding",
    "GRUCell",
    "Linear",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "current_tape",
    "embedding",
    "gru_step",
    "matmul",
    "mul",
    "relu",
    "reshape",
    "sigmoid",
    "softmax_cross_entropy",
    "split",
    "sub",
    "tanh",
    "tmean",
    "tsum",
    "uniform_init",
]
