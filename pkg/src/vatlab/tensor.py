"""Dense float64 tensors with reverse-mode differentiation.

A Tensor wraps a row-major numpy array of doubles plus an optional gradient
buffer. Operations (see ops.py) build a graph of Tensor nodes; backward()
walks it once in reverse topological order and accumulates d(loss)/d(node)
into each node's grad. Graph edges are only recorded when some input requires
a gradient, so constant-only forwards allocate no closures.

Everything is double precision: finite-difference checks against the analytic
gradients are then decisive at tolerances around 1e-5.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor dimensions violate an operation's contract."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Same values, no graph membership, no gradient."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Minimal arithmetic: same-shape addition and scaling by a python scalar.
    # Anything richer (broadcasting, elementwise tensor products) is out of
    # scope; the layer primitives in ops.py carry the real work.
    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            return NotImplemented
        if self.shape != other.shape:
            raise ShapeError(f"add: shape mismatch {self.shape} vs {other.shape}")
        out = make_node(self.data + other.data, (self, other))
        if out.requires_grad:
            def bwd():
                accumulate(self, out.grad)
                accumulate(other, out.grad)
            out._backward = bwd
        return out

    def __mul__(self, scalar) -> "Tensor":
        c = float(scalar)
        out = make_node(self.data * c, (self,))
        if out.requires_grad:
            def bwd():
                accumulate(self, out.grad * c)
            out._backward = bwd
        return out

    __rmul__ = __mul__


def make_node(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    """Create an op output, tracking parents only when gradients can flow."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution into t.grad (first write owns a copy)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate grad buffers of every requires-grad node reachable from loss.

    loss must be a scalar node. The walk is one-shot: afterwards the graph's
    closures and parent links are dropped, both to release the activation
    memory they pin (each closure holds its output node, a reference cycle the
    interpreter would otherwise only reclaim on a gc pass) and to make a
    second differentiation of the same graph impossible rather than silently
    wrong. Recompute the forward to differentiate again.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward expects a scalar node, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return  # constant graph: nothing to differentiate

    # Iterative post-order: children before parents in `order`.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(loss, 0)]
    while stack:
        node, i = stack.pop()
        if i == 0:
            if id(node) in visited:
                continue
            visited.add(id(node))
        if i < len(node._parents):
            stack.append((node, i + 1))
            parent = node._parents[i]
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, 0))
        else:
            order.append(node)

    accumulate(loss, np.ones((), dtype=np.float64))
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
    for node in order:
        node._backward = None
        node._parents = ()
