"""Dense float tensors with reverse-mode differentiation on an explicit tape.

Every differentiable operation computes its forward value eagerly with numpy
and, when a tape is active and an input wants gradients, appends a backward
rule to that tape.  Because outputs are always recorded after their inputs,
the recording order is a topological order of the dataflow graph: replaying
the records in reverse propagates gradients from a scalar loss to every
parameter that influenced it, visiting each operation exactly once.

With no active tape the same functions run as plain numpy forward math,
which is the inference path used by sampling and likelihood scoring.
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from ..errors import ContractError, DimensionError

_ACTIVE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    Use as a context manager around the forward computation; gradients do not
    flow across tape boundaries, which is what makes truncated
    backpropagation-through-time a structural property rather than a policy.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> bool:
        popped = _tape_stack().pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: "Tensor", rule: Callable[[np.ndarray], None]) -> None:
        output._tape = self
        self._records.append((output, rule))

    def backward(self, loss: "Tensor") -> None:
        """Populate ``grad`` on every recorded tensor the loss depends on."""
        if loss.data.shape != ():
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        if loss._tape is not self:
            raise ContractError("loss was not produced on this tape")
        loss.accumulate_grad(np.ones_like(loss.data))
        for output, rule in reversed(self._records):
            if output.grad is not None:
                rule(output.grad)


def backward(loss: "Tensor", tape: Tape) -> None:
    tape.backward(loss)


class Tensor:
    """A dense n-dimensional float array, optionally tracked for gradients.

    ``data`` is a numpy array (float64 unless constructed otherwise); ``grad``
    is lazily allocated with the same shape.  Gradients accumulate additively,
    so a tensor used in several branches receives the sum of all branch
    contributions.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def clear_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar so layer code reads like the math
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _wants_grad(*tensors: Tensor) -> Tape | None:
    """Active tape if any input participates in differentiation, else None."""
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in tensors):
        return tape
    return None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors, [m,k] x [k,n] -> [m,n]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul requires [m,k] x [k,n] operands, got {a.shape} x {b.shape}"
        )
    out = Tensor(a.data @ b.data)
    tape = _wants_grad(a, b)
    if tape is not None:
        out.requires_grad = True

        def rule(g, a=a, b=b):
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)

        tape.record(out, rule)
    return out


def _binary(a, b, forward, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(forward(a.data, b.data))
    tape = _wants_grad(a, b)
    if tape is not None:
        out.requires_grad = True

        def rule(g, a=a, b=b):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(da(g, a.data, b.data), a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(db(g, a.data, b.data), b.shape))

        tape.record(out, rule)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def _unary(x, forward, dx) -> Tensor:
    x = as_tensor(x)
    out = Tensor(forward(x.data))
    tape = _wants_grad(x)
    if tape is not None:
        out.requires_grad = True

        def rule(g, x=x, out=out):
            x.accumulate_grad(dx(g, x.data, out.data))

        tape.record(out, rule)
    return out


def sigmoid(x) -> Tensor:
    # evaluated via tanh for stability at large |x|
    return _unary(
        x,
        lambda v: 0.5 * (np.tanh(0.5 * v) + 1.0),
        lambda g, v, y: g * y * (1.0 - y),
    )


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda g, v, y: g * (1.0 - y * y))


def relu(x) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, v, y: g * (v > 0))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    tape = _wants_grad(x)
    if tape is not None:
        out.requires_grad = True

        def rule(g, x=x):
            x.accumulate_grad(g.reshape(x.shape))

        tape.record(out, rule)
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("concat requires at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    tape = _wants_grad(*parts)
    if tape is not None:
        out.requires_grad = True
        sizes = [p.data.shape[axis] for p in parts]
        bounds = np.cumsum(sizes)[:-1]

        def rule(g, parts=parts, bounds=bounds, axis=axis):
            for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
                if p.requires_grad:
                    p.accumulate_grad(piece)

        tape.record(out, rule)
    return out


def split(x, sections: int, axis: int = -1) -> list[Tensor]:
    """Split into equal parts along an axis; inverse of :func:`concat`."""
    x = as_tensor(x)
    if x.shape[axis] % sections != 0:
        raise DimensionError(
            f"cannot split axis of length {x.shape[axis]} into {sections} equal parts"
        )
    pieces = np.split(x.data, sections, axis=axis)
    outs = [Tensor(p.copy()) for p in pieces]
    tape = _wants_grad(x)
    if tape is not None:
        size = x.shape[axis] // sections
        for i, out in enumerate(outs):
            out.requires_grad = True

            def rule(g, x=x, i=i, size=size, axis=axis):
                full = np.zeros_like(x.data)
                index = [slice(None)] * x.ndim
                index[axis] = slice(i * size, (i + 1) * size)
                full[tuple(index)] = g
                x.accumulate_grad(full)

            tape.record(out, rule)
    return outs


def embedding(table, indices) -> Tensor:
    """Gather rows of ``table`` (rows x dim) by an integer index array."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise ContractError("embedding indices must be integers")
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding index out of range [0, {table.shape[0]}): "
            f"min {idx.min()}, max {idx.max()}"
        )
    out = Tensor(table.data[idx])
    tape = _wants_grad(table)
    if tape is not None:
        out.requires_grad = True

        def rule(g, table=table, idx=idx):
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

        tape.record(out, rule)
    return out


def tsum(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum())
    tape = _wants_grad(x)
    if tape is not None:
        out.requires_grad = True

        def rule(g, x=x):
            x.accumulate_grad(np.broadcast_to(g, x.shape).astype(x.data.dtype))

        tape.record(out, rule)
    return out


def tmean(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.mean())
    tape = _wants_grad(x)
    if tape is not None:
        out.requires_grad = True
        n = x.data.size

        def rule(g, x=x, n=n):
            x.accumulate_grad(np.broadcast_to(g / n, x.shape).astype(x.data.dtype))

        tape.record(out, rule)
    return out


def softmax_cross_entropy(logits, target) -> Tensor:
    """Negative log softmax probability of the target class, in nats.

    1-D logits with an int target give a scalar; 2-D logits of shape (n, c)
    with an int vector of length n give the per-row losses.  Stabilized by
    max subtraction.
    """
    logits = as_tensor(logits)
    if logits.ndim == 1:
        squeeze = True
        data = logits.data[None, :]
        targets = np.asarray([target])
    elif logits.ndim == 2:
        squeeze = False
        data = logits.data
        targets = np.asarray(target)
        if targets.shape != (data.shape[0],):
            raise DimensionError(
                f"expected {data.shape[0]} targets for logits {logits.shape}, "
                f"got shape {targets.shape}"
            )
    else:
        raise DimensionError(f"logits must be 1-D or 2-D, got {logits.shape}")
    if targets.dtype.kind not in "iu":
        raise ContractError("targets must be integer class indices")
    n, c = data.shape
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise IndexError(
            f"target class out of range [0, {c}): min {targets.min()}, "
            f"max {targets.max()}"
        )
    m = data.max(axis=1, keepdims=True)
    shifted = data - m
    sumexp = np.exp(shifted).sum(axis=1)
    rows = np.arange(n)
    losses = np.log(sumexp) - shifted[rows, targets]
    out = Tensor(losses[0] if squeeze else losses)
    tape = _wants_grad(logits)
    if tape is not None:
        out.requires_grad = True
        probs = np.exp(shifted) / sumexp[:, None]

        def rule(g, logits=logits, probs=probs, targets=targets, squeeze=squeeze):
            gg = np.asarray(g).reshape(-1, 1)
            grad = probs * gg
            grad[rows, targets] -= gg[:, 0]
            logits.accumulate_grad(grad[0] if squeeze else grad)

        tape.record(out, rule)
    return out
