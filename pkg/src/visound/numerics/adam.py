"""Adam optimizer with bias correction.

Holds first/second moment accumulators per named parameter; ``step`` applies

    m = b1*m + (1-b1)*g          v = b2*v + (1-b2)*g^2
    p -= lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)

and clears gradients afterwards.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class Adam:
    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"adam step: parameter '{name}' has no gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step_count": self.step_count,
            "m": dict(self.m),
            "v": dict(self.v),
        }

    def load_state_dict(self, state: dict) -> None:
        self.learning_rate = float(state["learning_rate"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.epsilon = float(state["epsilon"])
        self.step_count = int(state["step_count"])
        for name in self.params:
            if name not in state["m"] or name not in state["v"]:
                raise ContractError(f"adam state missing moments for '{name}'")
            self.m[name] = np.array(state["m"][name], dtype=self.params[name].data.dtype)
            self.v[name] = np.array(state["v"][name], dtype=self.params[name].data.dtype)


def adam_step(state: Adam) -> None:
    """Apply one optimizer update; gradients must be populated beforehand."""
    state.step()
