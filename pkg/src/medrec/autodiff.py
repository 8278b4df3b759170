"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tape records operations in creation order (a valid topological order);
backward walks it once in reverse. Values are float64 throughout; leaf
tensors (parameters) accumulate gradients in .grad.
"""

from __future__ import annotations

import numpy as np


class TapeConsumedError(RuntimeError):
    """Backward was already run on this tape."""


class Tape:
    """Recorded computation for one forward pass."""

    _active: "Tape | None" = None

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = None
        return False

    def backward(self, loss: "Tensor", seed: float = 1.0) -> None:
        """Reverse sweep from a scalar loss; visits each node exactly once."""
        if self.consumed:
            raise TapeConsumedError("tape already consumed by a backward pass")
        if loss.value.size != 1:
            raise ValueError("backward requires a scalar loss")
        self.consumed = True
        for node in self.nodes:
            node.grad = None
        loss.grad = np.full_like(loss.value, seed)
        for node in reversed(self.nodes):
            if node.grad is None or node._vjp is None:
                continue
            node._vjp(node.grad)
            node._vjp = None
            node._parents = ()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_vjp", "_parents")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise ValueError("non-finite tensor value")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._vjp = None
        self._parents: tuple = ()

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.value.shape)
        self.grad = g if self.grad is None else self.grad + g

    # --- op plumbing ---------------------------------------------------------

    @staticmethod
    def _record(out: "Tensor", parents, vjp) -> "Tensor":
        # record only when a parent is a parameter or itself recorded
        tape = Tape._active
        if tape is not None and any(p.requires_grad or p._vjp is not None for p in parents):
            out._vjp = vjp
            out._parents = tuple(parents)
            tape.nodes.append(out)
        return out

    # --- arithmetic ----------------------------------------------------------

    @staticmethod
    def _wrap(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other):
        other = Tensor._wrap(other)
        out = Tensor(self.value + other.value)

        def vjp(g):
            self._accum(g)
            other._accum(g)

        return Tensor._record(out, (self, other), vjp)

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.value)

        def vjp(g):
            self._accum(-g)

        return Tensor._record(out, (self,), vjp)

    def __sub__(self, other):
        return self + (-Tensor._wrap(other))

    def __rsub__(self, other):
        return Tensor._wrap(other) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other)
        out = Tensor(self.value * other.value)

        def vjp(g):
            self._accum(g * other.value)
            other._accum(g * self.value)

        return Tensor._record(out, (self, other), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other)
        out = Tensor(self.value / other.value)

        def vjp(g):
            self._accum(g / other.value)
            other._accum(-g * self.value / (other.value * other.value))

        return Tensor._record(out, (self, other), vjp)

    def __rtruediv__(self, other):
        return Tensor._wrap(other) / self

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor._wrap(other)
        out = Tensor(self.value @ other.value)

        def vjp(g):
            a, b = self.value, other.value
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            self._accum(_unbroadcast(ga, a.shape))
            other._accum(_unbroadcast(gb, b.shape))

        return Tensor._record(out, (self, other), vjp)

    __matmul__ = matmul

    # --- shape ops -----------------------------------------------------------

    def __getitem__(self, idx) -> "Tensor":
        out = Tensor(self.value[idx])
        shape = self.value.shape

        def vjp(g):
            full = np.zeros(shape, dtype=np.float64)
            np.add.at(full, idx, g)
            self._accum(full)

        return Tensor._record(out, (self,), vjp)

    def reshape(self, *shape) -> "Tensor":
        old = self.value.shape
        out = Tensor(self.value.reshape(*shape))

        def vjp(g):
            self._accum(g.reshape(old))

        return Tensor._record(out, (self,), vjp)

    def transpose(self, *axes) -> "Tensor":
        inv = np.argsort(axes)
        out = Tensor(self.value.transpose(*axes))

        def vjp(g):
            self._accum(g.transpose(*inv))

        return Tensor._record(out, (self,), vjp)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims))
        shape = self.value.shape

        def vjp(g):
            if axis is None:
                self._accum(np.broadcast_to(g, shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, shape).copy())

        return Tensor._record(out, (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    @staticmethod
    def concat(tensors: "list[Tensor]", axis: int = -1) -> "Tensor":
        out = Tensor(np.concatenate([t.value for t in tensors], axis=axis))
        sizes = [t.value.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                t._accum(piece)

        return Tensor._record(out, tuple(tensors), vjp)

    # --- nonlinearities ------------------------------------------------------

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.value))

        def vjp(g):
            self._accum(g * out.value)

        return Tensor._record(out, (self,), vjp)

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.value))

        def vjp(g):
            self._accum(g / self.value)

        return Tensor._record(out, (self,), vjp)

    def sqrt(self) -> "Tensor":
        out = Tensor(np.sqrt(self.value))

        def vjp(g):
            self._accum(g * 0.5 / out.value)

        return Tensor._record(out, (self,), vjp)

    def tanh(self) -> "Tensor":
        out = Tensor(np.tanh(self.value))

        def vjp(g):
            self._accum(g * (1.0 - out.value * out.value))

        return Tensor._record(out, (self,), vjp)

    def sigmoid(self) -> "Tensor":
        out = Tensor(1.0 / (1.0 + np.exp(-self.value)))

        def vjp(g):
            self._accum(g * out.value * (1.0 - out.value))

        return Tensor._record(out, (self,), vjp)

    def gelu(self) -> "Tensor":
        # tanh-form gelu; smooth everywhere, which keeps finite-difference
        # gradient checks well conditioned
        c = np.sqrt(2.0 / np.pi)
        x = self.value
        inner = c * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        out = Tensor(0.5 * x * (1.0 + t))

        def vjp(g):
            dinner = c * (1.0 + 3 * 0.044715 * x**2)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            self._accum(g * d)

        return Tensor._record(out, (self,), vjp)

    def clip(self, lo: float, hi: float) -> "Tensor":
        # zero gradient outside the active range
        out = Tensor(np.clip(self.value, lo, hi))
        mask = (self.value > lo) & (self.value < hi)

        def vjp(g):
            self._accum(g * mask)

        return Tensor._record(out, (self,), vjp)

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.value - self.value.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(s)

        def vjp(g):
            dot = (g * s).sum(axis=axis, keepdims=True)
            self._accum(s * (g - dot))

        return Tensor._record(out, (self,), vjp)
