"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Variable` wraps an ``ndarray`` together with the closure that
propagates its gradient to the variables it was computed from. Calling
:func:`backward` on a scalar variable walks the recorded graph in reverse
topological order.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import NonFiniteError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Variable:
    """A node in the computation graph.

    ``data`` is never mutated by operations; optimizers replace parameter
    values in place between graph builds only.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, *, check_finite=True):
        arr = np.asarray(data)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float32)
        if check_finite and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Variable(shape={self.data.shape}, dtype={self.data.dtype}{label})"

    # arithmetic sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def sum(self):
        from . import functional as F
        return F.sum(self)

    def mean(self):
        from . import functional as F
        return F.mean(self)


def as_variable(x, dtype=None) -> Variable:
    if isinstance(x, Variable):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(dtype or np.float32)
    return Variable(arr)


def make_result(data, parents, backward) -> Variable:
    """Wrap an op output, recording ``backward`` only when a parent needs it."""
    out = Variable(data, check_finite=False)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def accumulate(var: Variable, g) -> None:
    if not var.requires_grad:
        return
    if g.shape != var.data.shape:
        raise ShapeError(f"gradient shape {g.shape} != value shape {var.data.shape}")
    if var.grad is None:
        var.grad = np.array(g, dtype=var.data.dtype, copy=True)
    else:
        var.grad += g


def _topological_order(root: Variable):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def backward(loss: Variable, params=None) -> None:
    """Populate ``.grad`` on every variable upstream of ``loss``.

    Gradients accumulate into existing ``.grad`` arrays. Any variable in
    ``params`` that the loss does not depend on receives a zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = _topological_order(loss)
    # interior nodes start fresh; leaves keep accumulating
    for node in order:
        if node._backward is not None:
            node.grad = None
    accumulate(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    # interior gradients are no longer needed; free them
    for node in order:
        if node._backward is not None:
            node.grad = None
            node._parents = ()
            node._backward = None
