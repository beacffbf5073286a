"""Dense float64 tensors with a define-by-run reverse-mode tape.

Operations record a node on the innermost active :class:`Tape` whenever at
least one input requires a gradient.  Nodes are appended in execution order,
so the tape is topologically sorted by construction and a reverse walk visits
every node exactly once.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = ["Tensor", "Tape", "Node", "as_tensor", "record", "unbroadcast"]

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class Tensor:
    """Immutable n-dimensional array of 64-bit floats.

    Parameters
    ----------
    data : array_like
        Values; copied into a C-ordered float64 array.
    requires_grad : bool
        Mark as a differentiation leaf (e.g. a model parameter).
    name : str, optional
        Used in error messages and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "grad_node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        # a view, so freezing it never touches the caller's array; keeps 0-d shapes
        arr = (arr if arr.flags.c_contiguous else arr.copy(order="C")).view()
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # position of the producing node on the recording tape (None for leaves)
        self.grad_node: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

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

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def _raise_item(t: Tensor) -> float:
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class Node:
    """One recorded operation: its output, inputs and the vector-Jacobian map."""

    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; it becomes the recording target for operations
    executed on the current thread until the block exits.

    >>> w = Tensor([2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (w * w).sum()
    >>> tape.gradient(y, [w])[0]
    array([4.])
    """

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()

    def gradient(self, target: Tensor, sources: Iterable[Tensor], seed=None) -> list:
        """Vector-Jacobian product of ``target`` with respect to ``sources``.

        ``seed`` defaults to ones (so a scalar target yields its gradient).
        Sources that do not influence the target receive zero arrays.
        """
        sources = list(sources)
        grads: dict[int, np.ndarray] = {}
        if seed is None:
            seed = np.ones(target.shape)
        grads[id(target)] = np.asarray(seed, dtype=np.float64).reshape(target.shape)
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(np.zeros(s.shape) if g is None else np.asarray(g).reshape(s.shape))
        return out


def record(op: str, inputs: tuple, out_data: np.ndarray, backward) -> Tensor:
    """Wrap ``out_data`` in a Tensor and log the op on the active tape if needed."""
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    stack = _stack()
    out = Tensor(out_data, requires_grad=needs and bool(stack))
    if out.requires_grad:
        # the handle is an index, not the Node: a tensor <-> node cycle would keep
        # whole graphs alive until the cycle collector happened to run
        tape = stack[-1]
        out.grad_node = len(tape.nodes)
        tape.nodes.append(Node(op, inputs, out, backward))
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)
