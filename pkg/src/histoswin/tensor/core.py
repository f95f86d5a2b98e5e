"""Tensor type and the tape that records differentiable operations.

Operations only record themselves while a :class:`Tape` is active, so plain
inference never builds a graph::

    tape = Tape()
    with tape:
        loss = cross_entropy(softmax(x @ w), y)
    backward(loss, tape)
    w.grad
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, NumericError

DEFAULT_DTYPE = np.float32

# per thread, so read-only evaluation in worker threads never records
_LOCAL = threading.local()


def _tapes() -> list:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = _LOCAL.tapes = []
    return stack


class Tensor:
    """Dense real array with an optional gradient.

    ``data`` is a numpy array (row-major). ``grad`` is populated by
    :func:`backward` for leaves created with ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        arr = np.array(data, dtype=dtype, copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor constructed from non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path: no copy, no finiteness scan
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._parents = ()
        t._backward = None
        t._op = "leaf"
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, np.ndarray) and x.dtype.kind == "f" and (dtype is None or x.dtype == dtype):
        return Tensor._wrap(x)
    return Tensor(x, dtype=dtype)


class Tape:
    """Ordered record of executed differentiable operations.

    Nodes are appended as operations run, which is already a topological
    order. A tape can be consumed by :func:`backward` exactly once.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[int, Tensor] = {}
        self.consumed = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise ContractError("tape already consumed by backward")
        _tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes().remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)
        for p in node._parents:
            if p.requires_grad and p.is_leaf:
                self.leaves.setdefault(id(p), p)

    def ops(self) -> list[str]:
        return [n._op for n in self.nodes]


def active_tape() -> Optional[Tape]:
    stack = _tapes()
    return stack[-1] if stack else None


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op output; attach it to the active tape when any input needs grad."""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor._wrap(data)
    out._op = op
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        tape.record(out)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every grad-requiring leaf recorded on ``tape``.

    Leaves on the tape that do not reach ``loss`` receive zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("tape already consumed by backward")
    if loss.is_leaf:
        if not loss.requires_grad:
            raise ContractError("loss is not reachable from the tape")
        tape.consumed = True
        loss.grad = np.ones_like(loss.data)
        return
    if not any(n is loss for n in tape.nodes):
        raise ContractError("loss is not reachable from the tape")
    tape.consumed = True
    for leaf in tape.leaves.values():
        leaf.grad = np.zeros_like(leaf.data)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p.is_leaf:
                p.grad += pg
            else:
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
    # release references held by closures
    tape.nodes.clear()
