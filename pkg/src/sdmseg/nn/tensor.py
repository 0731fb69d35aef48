"""A small reverse-mode autodiff tensor.

Each operation produces a new :class:`Tensor` remembering its parents and a
closure mapping the output gradient to one gradient per parent. Calling
``backward`` on a result walks the recorded graph in reverse topological
order and accumulates into ``.grad``.
"""
from __future__ import annotations

from contextlib import contextmanager
from itertools import count

import numpy as np

__all__ = ["Tensor", "no_grad", "grad_enabled", "as_tensor"]

_ids = count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Run operations without recording them, so intermediates can be freed."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_ids)
        self._parents = ()
        self._backward = None

    @classmethod
    def from_op(cls, data, parents, backward):
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        ``grad`` is the upstream gradient; it defaults to one for a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar tensor needs an explicit grad")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"grad shape {grad.shape} does not match tensor shape {self.shape}")

        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))

        grads = {self.node_id: grad}
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                prev = grads.get(p.node_id)
                grads[p.node_id] = gp if prev is None else prev + gp

    # arithmetic used by tests and losses built on the tape
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        return Tensor.from_op(self.data + other.data, (self, other),
                              lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor.from_op(a * b, (self, other),
                              lambda g: (_unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)))

    __rmul__ = __mul__

    def sum(self):
        shape = self.shape
        return Tensor.from_op(np.sum(self.data), (self,), lambda g: (np.broadcast_to(g, shape).copy(),))

    def mean(self):
        n = self.data.size
        return self.sum() * (1.0 / n)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g
