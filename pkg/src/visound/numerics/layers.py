"""Neural layers used by the waveform generator: linear maps, sample-code
embeddings, and a gated recurrent cell.

Weight matrices initialize uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
with zero biases; pass an explicit numpy Generator so construction is
deterministic per seed.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """Affine map x @ w + b with w of shape (in_dim, out_dim)."""

    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int, dtype=np.float64):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w = Tensor(uniform_init(rng, in_dim, (in_dim, out_dim), dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class Embedding:
    """Lookup table mapping integer codes to dense vectors."""

    def __init__(self, rng: np.random.Generator, rows: int, dim: int, dtype=np.float64):
        self.rows = rows
        self.dim = dim
        self.table = Tensor(uniform_init(rng, rows, (rows, dim), dtype), requires_grad=True)

    def __call__(self, indices) -> Tensor:
        return T.embedding(self.table, indices)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.table": self.table}


class GRUCell:
    """Gated recurrent cell parameters and single-step recurrence.

    The step computes, with sigmoid gates z (update) and r (reset):

        z  = sigmoid(x @ wz + h @ uz + bz)
        r  = sigmoid(x @ wr + h @ ur + br)
        hc = tanh(x @ wh + (r * h) @ uh + bh)
        h' = (1 - z) * h + z * hc

    so a closed update gate (z -> 0) carries the previous state through
    unchanged.
    """

    def __init__(self, rng: np.random.Generator, input_dim: int, hidden_dim: int, dtype=np.float64):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim

        def w():
            return Tensor(uniform_init(rng, input_dim, (input_dim, hidden_dim), dtype), requires_grad=True)

        def u():
            return Tensor(uniform_init(rng, hidden_dim, (hidden_dim, hidden_dim), dtype), requires_grad=True)

        def b():
            return Tensor(np.zeros(hidden_dim, dtype=dtype), requires_grad=True)

        self.wz, self.uz, self.bz = w(), u(), b()
        self.wr, self.ur, self.br = w(), u(), b()
        self.wh, self.uh, self.bh = w(), u(), b()

    def step(self, x, h) -> Tensor:
        x = T.as_tensor(x)
        h = T.as_tensor(h)
        flat = x.ndim == 1
        if flat:
            x = T.reshape(x, (1, x.shape[0]))
        if h.ndim == 1:
            h = T.reshape(h, (1, h.shape[0]))
        if x.shape[-1] != self.input_dim or h.shape[-1] != self.hidden_dim:
            raise DimensionError(
                f"gru step expects input dim {self.input_dim} and hidden dim "
                f"{self.hidden_dim}, got x {x.shape}, h {h.shape}"
            )
        z = T.sigmoid(x @ self.wz + h @ self.uz + self.bz)
        r = T.sigmoid(x @ self.wr + h @ self.ur + self.br)
        hc = T.tanh(x @ self.wh + T.mul(r, h) @ self.uh + self.bh)
        out = (1.0 - z) * h + z * hc
        if flat:
            out = T.reshape(out, (self.hidden_dim,))
        return out

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        names = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"]
        return {f"{prefix}.{n}": getattr(self, n) for n in names}


def gru_step(cell: GRUCell, x, h) -> Tensor:
    """One recurrence step of ``cell``; accepts single vectors or batches."""
    return cell.step(x, h)
