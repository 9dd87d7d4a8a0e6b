"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray and remembers how it was produced.
Calling :meth:`Tensor.backward` on a scalar result walks the tape in
reverse topological order and accumulates gradients into every tensor
created with ``requires_grad=True``.  Only the operations the forecasting
models need are implemented; each op defines its own local backward rule.

Broadcasting is supported for add/sub/mul: gradients are summed back over
the broadcast axes.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over axes that were added or stretched by broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An ndarray node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._backward = None
        self._parents: tuple["Tensor", ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def _make(self, data: np.ndarray, parents: tuple["Tensor", ...]) -> "Tensor":
        out = Tensor(data)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out.grad = np.zeros_like(out.data)
            out._parents = parents
        return out

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        out = self._make(self.data + other.data, (self, other))

        def backward():
            if self.requires_grad:
                self.grad += _unbroadcast(out.grad, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(out.grad, other.data.shape)

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = self._make(-self.data, (self,))

        def backward():
            if self.requires_grad:
                self.grad += -out.grad

        out._backward = backward
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)
        out = self._make(self.data * other.data, (self, other))

        def backward():
            if self.requires_grad:
                self.grad += _unbroadcast(out.grad * other.data, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(out.grad * self.data, other.data.shape)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        other = self._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        out = self._make(self.data @ other.data, (self, other))

        def backward():
            if self.requires_grad:
                self.grad += out.grad @ other.data.T
            if other.requires_grad:
                other.grad += self.data.T @ out.grad

        out._backward = backward
        return out

    def __getitem__(self, index) -> "Tensor":
        out = self._make(self.data[index], (self,))

        def backward():
            if self.requires_grad:
                self.grad[index] += out.grad

        out._backward = backward
        return out

    # -- shape ops --------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self._make(self.data.reshape(shape), (self,))

        def backward():
            if self.requires_grad:
                self.grad += out.grad.reshape(self.data.shape)

        out._backward = backward
        return out

    # -- nonlinearities and reductions -------------------------------------

    def tanh(self) -> "Tensor":
        value = np.tanh(self.data)
        out = self._make(value, (self,))

        def backward():
            if self.requires_grad:
                self.grad += (1.0 - value**2) * out.grad

        out._backward = backward
        return out

    def sigmoid(self) -> "Tensor":
        value = 1.0 / (1.0 + np.exp(-self.data))
        out = self._make(value, (self,))

        def backward():
            if self.requires_grad:
                self.grad += value * (1.0 - value) * out.grad

        out._backward = backward
        return out

    def sum(self) -> "Tensor":
        out = self._make(np.asarray(self.data.sum()), (self,))

        def backward():
            if self.requires_grad:
                self.grad += out.grad

        out._backward = backward
        return out

    def mean(self, axis: int | None = None) -> "Tensor":
        if axis is None:
            out = self._make(np.asarray(self.data.mean()), (self,))
            scale = 1.0 / self.data.size

            def backward():
                if self.requires_grad:
                    self.grad += scale * out.grad

        else:
            out = self._make(self.data.mean(axis=axis), (self,))
            scale = 1.0 / self.data.shape[axis]

            def backward():
                if self.requires_grad:
                    self.grad += scale * np.expand_dims(out.grad, axis)

        out._backward = backward
        return out

    def backward(self) -> None:
        """Backpropagate from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def stack(tensors: list[Tensor], axis: int = 1) -> Tensor:
    """Stack tensors along a new axis (differentiable)."""
    if not tensors:
        raise ValueError("nothing to stack")
    data = np.stack([t.data for t in tensors], axis=axis)
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in tensors)
    if out.requires_grad:
        out.grad = np.zeros_like(out.data)
        out._parents = tuple(tensors)

        def backward():
            grads = np.moveaxis(out.grad, axis, 0)
            for t, g in zip(tensors, grads):
                if t.requires_grad:
                    t.grad += g

        out._backward = backward
    return out


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    """Concatenate tensors along an existing axis (differentiable)."""
    if not tensors:
        raise ValueError("nothing to concatenate")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in tensors)
    if out.requires_grad:
        out.grad = np.zeros_like(out.data)
        out._parents = tuple(tensors)
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    index = [slice(None)] * out.grad.ndim
                    index[axis] = slice(int(lo), int(hi))
                    t.grad += out.grad[tuple(index)]

        out._backward = backward
    return out
