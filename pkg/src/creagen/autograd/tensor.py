"""Tensor type and reverse-mode gradient accumulation.

A `Tensor` wraps a numpy array. Operations on tensors that require gradients
record their parents and a backward closure; `backward` walks that record in
reverse topological order.

Broadcasting rule (elementwise ops): operand shapes must be identical, or one
operand is a 0-d scalar, or one operand's shape equals the other's shape with
the leading (batch) dimension dropped. Nothing else broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class BackwardError(RuntimeError):
    """Raised when backward is called on a graph it cannot (or may not) traverse."""


class Tensor:
    """N-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_consumed", "__weakref__")

    # let numpy defer to Tensor's reflected operators
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"
        self._consumed = False

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{rg})"

    def __len__(self) -> int:
        return len(self.data)

    # --------------------------------------------------------------- operators
    def __add__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            return F.add(self, other)
        return F.shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            return F.sub(self, other)
        return F.shift(self, -float(other))

    def __rsub__(self, other):
        from . import functional as F

        return F.shift(F.scale(self, -1.0), float(other))

    def __mul__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            return F.mul(self, other)
        return F.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; use mul with a reciprocal")
        return F.scale(self, 1.0 / float(other))

    def __neg__(self):
        from . import functional as F

        return F.scale(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F

        return F.matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        from . import functional as F

        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import functional as F

        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op result, registering its gradient rule when any parent tracks gradients.

    `backward_fn` receives dL/d(output) and returns one gradient (or None) per parent.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


@dataclass
class ComputationRecord:
    """Executed operations reachable from a tensor, in topological order.

    Each entry is ``(op_name, inputs, output)``; every entry appears after the
    entries producing its inputs.
    """

    entries: list[tuple[str, tuple[Tensor, ...], Tensor]] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def ops(self) -> list[str]:
        return [name for name, _, _ in self.entries]


def record(root: Tensor) -> ComputationRecord:
    """Build the computation record for everything `root` depends on."""
    rec = ComputationRecord()
    if not root.requires_grad:
        return rec
    order: list[Tensor] = []
    seen: set[int] = set()
    # iterative post-order DFS; recursion depth would blow up on long chains
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        if node.is_leaf:
            rec.leaves.append(node)
        else:
            rec.entries.append((node.op, node._parents, node))
    return rec


def backward(loss: Tensor) -> ComputationRecord:
    """Populate ``.grad`` on every tensor reachable from the scalar `loss`.

    Calling backward twice on the same graph, or into tensors whose gradients
    were not reset, raises `BackwardError` instead of accumulating.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise BackwardError("loss does not depend on any tensor requiring gradients")
    if loss._consumed:
        raise BackwardError("backward already ran on this graph; rebuild the forward pass")
    rec = record(loss)
    for leaf in rec.leaves:
        if leaf.grad is not None:
            raise BackwardError(f"{leaf!r} already holds a gradient; call zero_grad before backward")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for _, parents, out in reversed(rec.entries):
        g = grads.pop(id(out), None)
        if g is None:
            g = np.zeros_like(out.data)
        out.grad = g
        parent_grads = out._backward(g)
        for parent, pg in zip(parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise BackwardError(
                    f"op {out.op} produced gradient of shape {pg.shape} for input of shape {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for leaf in rec.leaves:
        g = grads.get(id(leaf))
        leaf.grad = np.zeros_like(leaf.data) if g is None else g.astype(leaf.dtype, copy=False)
    loss._consumed = True
    return rec
