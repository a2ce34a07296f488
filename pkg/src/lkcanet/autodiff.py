"""Reverse-mode automatic differentiation over numpy arrays.

Each differentiable operation returns a :class:`Var` node that remembers its
parents and a vector-Jacobian-product closure. :func:`backward` walks the
recorded graph once, in reverse topological order, accumulating gradients
into the leaves. The contract is gradient correctness (checked against
central finite differences), not any particular taping style.

Gradient recording can be suspended with :func:`no_grad`, e.g. for teacher
forwards and validation passes.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Context manager that disables graph recording."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Var:
    """A node in the reverse-mode graph wrapping one numpy array.

    Leaves (parameters, inputs) have no parents. ``grad`` is None until a
    backward pass deposits a gradient of the same shape as ``value``.
    """

    __slots__ = ("value", "grad", "name", "_parents", "_vjp")

    def __init__(self, value, name: str = ""):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.grad = None
        self.name = name
        self._parents: tuple = ()
        self._vjp = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def detach(self) -> "Var":
        return Var(self.value, name=self.name)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype}{tag})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def constant(x) -> np.ndarray:
    """Unwrap a Var (or pass an array through) as a non-differentiable value."""
    return x.value if isinstance(x, Var) else np.asarray(x)


def record(value: np.ndarray, parents: tuple, vjp) -> Var:
    """Create an interior node, or a detached leaf while gradients are off.

    ``vjp(grad_out)`` must return one gradient per parent (None for parents
    that do not receive gradient).
    """
    out = Var(value)
    if _grad_enabled:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def backward(root: Var) -> None:
    """Accumulate gradients of a scalar root into every reachable leaf."""
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")

    # Iterative post-order DFS: parents precede children in `order`.
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
