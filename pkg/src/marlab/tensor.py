"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every op returns a new Tensor holding its
parents and a closure that scatters the output gradient back to them.
Gradients are accumulated by a single topological-order sweep from a
scalar root. Everything is numpy under the hood; no view aliasing is
exposed (ops copy on the forward path where numpy would alias).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

# When False, ops skip recording parents/backward closures entirely.
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Iterable["Tensor"],
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED:
            parents = tuple(p for p in parents if p.requires_grad or p._parents)
            if parents:
                out.requires_grad = True
                out._parents = parents
                out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ------------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._lift(other)
        data = self.data + other.data

        def backward(g, a=self, b=other):
            if a.requires_grad or a._parents:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad or b._parents:
                b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._from_op(data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._lift(other)
        data = self.data - other.data

        def backward(g, a=self, b=other):
            if a.requires_grad or a._parents:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad or b._parents:
                b._accum(_unbroadcast(-g, b.data.shape))

        return Tensor._from_op(data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __neg__(self):
        def backward(g, a=self):
            a._accum(-g)

        return Tensor._from_op(-self.data, (self,), backward)

    def __mul__(self, other):
        other = Tensor._lift(other)
        data = self.data * other.data

        def backward(g, a=self, b=other):
            if a.requires_grad or a._parents:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad or b._parents:
                b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._from_op(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        data = self.data / other.data

        def backward(g, a=self, b=other):
            if a.requires_grad or a._parents:
                a._accum(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad or b._parents:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._from_op(data, (self, other), backward)

    def __pow__(self, p: float):
        data = self.data ** p

        def backward(g, a=self, p=p):
            a._accum(g * p * a.data ** (p - 1))

        return Tensor._from_op(data, (self,), backward)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor._lift(other)
        data = self.data @ other.data

        def backward(g, a=self, b=other):
            if a.requires_grad or a._parents:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accum(_unbroadcast(ga, a.data.shape))
            if b.requires_grad or b._parents:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accum(_unbroadcast(gb, b.data.shape))

        return Tensor._from_op(data, (self, other), backward)

    __matmul__ = matmul

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, a=self, axis=axis, keepdims=keepdims):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.data.shape).copy())

        return Tensor._from_op(data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities ---------------------------------------------

    def exp(self) -> "Tensor":
        data = np.exp(self.data)

        def backward(g, a=self, d=data):
            a._accum(g * d)

        return Tensor._from_op(data, (self,), backward)

    def log(self) -> "Tensor":
        data = np.log(self.data)

        def backward(g, a=self):
            a._accum(g / a.data)

        return Tensor._from_op(data, (self,), backward)

    def tanh(self) -> "Tensor":
        data = np.tanh(self.data)

        def backward(g, a=self, d=data):
            a._accum(g * (1.0 - d * d))

        return Tensor._from_op(data, (self,), backward)

    def sigmoid(self) -> "Tensor":
        data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g, a=self, d=data):
            a._accum(g * d * (1.0 - d))

        return Tensor._from_op(data, (self,), backward)

    def relu(self) -> "Tensor":
        data = np.maximum(self.data, 0.0)

        def backward(g, a=self):
            a._accum(g * (a.data > 0.0))

        return Tensor._from_op(data, (self,), backward)

    def elu(self) -> "Tensor":
        neg = np.expm1(np.minimum(self.data, 0.0))
        data = np.where(self.data > 0.0, self.data, neg)

        def backward(g, a=self, neg=neg):
            a._accum(g * np.where(a.data > 0.0, 1.0, neg + 1.0))

        return Tensor._from_op(data, (self,), backward)

    def softmax(self) -> "Tensor":
        """Softmax over the last axis."""
        x = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(x)
        data = e / e.sum(axis=-1, keepdims=True)

        def backward(g, a=self, s=data):
            gs = g * s
            a._accum(gs - s * gs.sum(axis=-1, keepdims=True))

        return Tensor._from_op(data, (self,), backward)

    def log_softmax(self) -> "Tensor":
        """Log-softmax over the last axis."""
        x = self.data - self.data.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(x).sum(axis=-1, keepdims=True))
        data = x - lse

        def backward(g, a=self, d=data):
            a._accum(g - np.exp(d) * g.sum(axis=-1, keepdims=True))

        return Tensor._from_op(data, (self,), backward)

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)

        def backward(g, a=self):
            a._accum(g.reshape(a.data.shape))

        return Tensor._from_op(data, (self,), backward)

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        idx = [slice(None)] * self.data.ndim
        idx[axis] = slice(start, start + length)
        idx = tuple(idx)
        data = self.data[idx].copy()

        def backward(g, a=self, idx=idx):
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accum(full)

        return Tensor._from_op(data, (self,), backward)


    def transpose_last2(self) -> "Tensor":
        data = np.swapaxes(self.data, -1, -2).copy()

        def backward(g, a=self):
            a._accum(np.swapaxes(g, -1, -2))

        return Tensor._from_op(data, (self,), backward)

    def repeat_rows(self, n: int) -> "Tensor":
        """Repeat each row n times along axis 0: [B, ...] -> [B*n, ...]."""
        data = np.repeat(self.data, n, axis=0)

        def backward(g, a=self, n=n):
            a._accum(g.reshape((a.data.shape[0], n) + a.data.shape[1:]).sum(axis=1))

        return Tensor._from_op(data, (self,), backward)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g, parts=tensors, sizes=sizes, axis=axis):
        offset = 0
        for t, n in zip(parts, sizes):
            if t.requires_grad or t._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                t._accum(g[tuple(idx)])
            offset += n

    return Tensor._from_op(data, tensors, backward)


def xlogy(x: Tensor, y: Tensor) -> Tensor:
    """x * log(y) with the convention 0 * log(0) == 0 (for entropy/KL terms)."""
    x = Tensor._lift(x)
    y = Tensor._lift(y)
    zero = x.data == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        logy = np.where(zero, 0.0, np.log(y.data))
    data = x.data * logy

    def backward(g, a=x, b=y, logy=logy, zero=zero):
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g * logy, a.data.shape))
        if b.requires_grad or b._parents:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(zero, 0.0, a.data / b.data)
            b._accum(_unbroadcast(g * ratio, b.data.shape))

    return Tensor._from_op(data, (x, y), backward)


def forward_backward(root: Tensor) -> dict[int, np.ndarray]:
    """Backpropagate from a scalar root; returns id(leaf) -> gradient.

    Every tensor reachable from the root gets its `.grad` populated;
    the returned map covers the requires_grad leaves only.
    """
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    grads: dict[int, np.ndarray] = {}
    for node in reversed(order):
        if node.grad is None:
            continue
        if node._backward is not None:
            node._backward(node.grad)
        elif node.requires_grad and not node._parents:
            grads[id(node)] = node.grad
    return grads
