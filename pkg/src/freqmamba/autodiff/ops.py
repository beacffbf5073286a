"""Differentiable primitive operations on :class:`Tensor`."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .tensor import Tensor, as_tensor, record, unbroadcast

__all__ = [
    "add", "sub", "mul", "div", "neg", "matmul", "sum", "mean", "reshape",
    "transpose", "concat", "gather_rows", "flip", "exp", "square", "sigmoid",
    "softplus", "silu", "swish", "sparse_apply", "mse", "DimensionError",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def _d(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record("add", (a, b), out,
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return record("sub", (a, b), out,
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd,
                  lambda g: (unbroadcast(g * bd, a.shape), unbroadcast(g * ad, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        ga = g / bd
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return record("div", (a, b), out, back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b`` with numpy batching rules."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record("matmul", (a, b), ad @ bd, back)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record("sum", (a,), out, back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return record("mean", (a,), out, back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return record("transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)),
                  lambda g: (g.transpose(inv),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return record("concat", tuple(tensors), out, back)


def gather_rows(a, index, unique: bool = False) -> Tensor:
    """Select rows along axis ``-2`` per batch item.

    ``a`` has shape ``(*batch, n, c)`` and ``index`` integer shape
    ``(*batch, m)``; the result is ``(*batch, m, c)``.  Pass ``unique=True``
    when each row is picked at most once (permutations, subsets) to use a
    plain scatter in the backward pass.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.ndim < 2 or index.shape[:-1] != a.shape[:-2]:
        raise DimensionError(f"gather_rows: index shape {index.shape} does not fit {a.shape}")
    batch = a.shape[:-2]
    n, c = a.shape[-2:]
    nb = int(np.prod(batch)) if batch else 1
    flat = (index.reshape(nb, -1) + (np.arange(nb) * n)[:, None]).ravel()
    out = a.data.reshape(nb * n, c)[flat].reshape(*index.shape, c)

    def back(g):
        gf = np.zeros((nb * n, c))
        if unique:
            gf[flat] = g.reshape(-1, c)
        else:
            np.add.at(gf, flat, g.reshape(-1, c))
        return (gf.reshape(a.shape),)

    return record("gather_rows", (a,), out, back)


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return record("flip", (a,), np.flip(a.data, axis=axis).copy(),
                  lambda g: (np.flip(g, axis=axis).copy(),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record("square", (a,), ad * ad, lambda g: (2.0 * g * ad,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return record("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return record("softplus", (a,), out, lambda g: (g * _sigmoid(x),))


def silu(a) -> Tensor:
    """``x * sigmoid(x)``."""
    return swish(a, 1.0)


def swish(a, beta: float = 1.0) -> Tensor:
    """``x * sigmoid(beta * x)``; with ``beta=1`` this is SiLU."""
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(beta * x)
    out = x * s

    def back(g):
        return (g * (s + beta * x * s * (1.0 - s)),)

    return record("swish", (a,), out, back)


def sparse_apply(matrix, a) -> Tensor:
    """Left-multiply a constant (sparse or dense) matrix: ``matrix @ a``.

    ``a`` is 2-D ``(n, c)``; ``matrix`` is ``(m, n)``.  Used for scatter-mean
    voxelization and trilinear gathers, whose weights do not need gradients.
    """
    a = as_tensor(a)
    if a.ndim != 2 or matrix.shape[1] != a.shape[0]:
        raise DimensionError(f"sparse_apply: matrix {matrix.shape} vs operand {a.shape}")
    out = np.asarray(matrix @ a.data)
    mt = matrix.T
    return record("sparse_apply", (a,), out, lambda g: (np.asarray(mt @ g),))


def mse(pred, target) -> Tensor:
    """Mean squared error averaged over every element."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    out = np.array((diff * diff).sum() / n)
    return record("mse", (pred, target), out,
                  lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n))
