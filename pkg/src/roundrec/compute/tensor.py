"""Dense tensors and the reverse-mode differentiation graph.

A Tensor is a flat ``array.array`` buffer ('f' or 'd') plus a shape. Forward
operations (see ops.py) link results to their inputs; ``backward`` walks that
implicit graph once in reverse topological order and accumulates gradients
into the leaves.

Buffers are treated as immutable once an operation has produced them, except
for parameter updates, which happen outside any graph.
"""

from __future__ import annotations

import math
from array import array
from contextlib import contextmanager

from .rng import RngState
from . import kernels

_SIZE = {"f": 4, "d": 8}

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _numel(shape) -> int:
    n = 1
    for s in shape:
        n *= s
    return n


class Tensor:
    __slots__ = ("shape", "data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, shape, data, requires_grad=False):
        shape = tuple(int(s) for s in shape)
        if len(data) != _numel(shape):
            raise ValueError(f"shape {shape} needs {_numel(shape)} values, got {len(data)}")
        self.shape = shape
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- construction -------------------------------------------------------

    @staticmethod
    def zeros(shape, dtype="f", requires_grad=False):
        return Tensor(shape, array(dtype, bytes(_numel(shape) * _SIZE[dtype])),
                      requires_grad=requires_grad)

    @staticmethod
    def full(shape, value, dtype="f", requires_grad=False):
        return Tensor(shape, array(dtype, [value] * _numel(shape)),
                      requires_grad=requires_grad)

    @staticmethod
    def from_values(values, shape=None, dtype="f", requires_grad=False):
        flat = list(_flatten(values))
        if shape is None:
            shape = _infer_shape(values)
        return Tensor(shape, array(dtype, flat), requires_grad=requires_grad)

    @staticmethod
    def rand_uniform(shape, lo, hi, rng: RngState, dtype="f", requires_grad=False):
        t = Tensor.zeros(shape, dtype)
        rng.counter = kernels.fill_uniform(t.data, lo, hi, rng.seed, rng.counter,
                                           len(t.data))
        t.requires_grad = requires_grad
        return t

    # -- basics --------------------------------------------------------------

    @property
    def dtype(self) -> str:
        return self.data.typecode

    @property
    def size(self) -> int:
        return len(self.data)

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return self.data[0]

    def tolist(self):
        return list(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.shape, array(self.dtype, self.data))

    def detach(self) -> "Tensor":
        """Same buffer, no graph."""
        return Tensor(self.shape, self.data)

    def astype(self, dtype: str) -> "Tensor":
        if dtype == self.dtype:
            return self.copy()
        return Tensor(self.shape, array(dtype, [float(v) for v in self.data]))

    def assert_finite(self, what="tensor"):
        if not kernels.isfinite_all(self.data, self.size):
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    # -- gradients -----------------------------------------------------------

    def ensure_grad(self) -> array:
        if self.grad is None:
            self.grad = array(self.dtype, bytes(self.size * _SIZE[self.dtype]))
        return self.grad

    def zero_grad(self):
        self.ensure_grad()
        for i in range(self.size):
            self.grad[i] = 0.0

    def grad_tensor(self) -> "Tensor":
        return Tensor(self.shape, self.ensure_grad())

    def __repr__(self):
        head = ", ".join(f"{v:.6g}" for v in list(self.data[:8]))
        tail = ", ..." if self.size > 8 else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, [{head}{tail}])"


def _flatten(values):
    if isinstance(values, (list, tuple)):
        for v in values:
            yield from _flatten(v)
    else:
        yield float(values)


def _infer_shape(values):
    shape = []
    v = values
    while isinstance(v, (list, tuple)):
        shape.append(len(v))
        v = v[0]
    return tuple(shape)


def record(out: Tensor, parents, backward_fn):
    """Attach graph edges to `out` if tracking is on and any parent needs them."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None):
    """Populate gradients of everything reachable from a scalar loss.

    When `params` is given, their gradients are zeroed first, so parameters
    the loss never touches end up with exact zeros.
    """
    if loss.size != 1:
        raise ValueError("backward requires a scalar loss")
    if not loss.requires_grad:
        raise ValueError("loss does not require gradients")
    if params is not None:
        for p in params:
            p.zero_grad()
    order = _topo_order(loss)
    loss.ensure_grad()
    loss.grad[0] = 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
    return loss


def check_finite_scalar(x: Tensor) -> float:
    v = x.item()
    if not math.isfinite(v):
        raise FloatingPointError("diverged")
    return v
