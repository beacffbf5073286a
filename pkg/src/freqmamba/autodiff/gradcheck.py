"""Directional finite-difference checks of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def _richardson(f: Callable[[float], float], h: float) -> float:
    wide = (f(h) - f(-h)) / (2 * h)
    narrow = (f(h / 2) - f(-h / 2)) / h
    return (4 * narrow - wide) / 3


def directional_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                      wrt: Sequence[int] | None = None, probes: int = 5,
                      h: float = 1e-4, rng: np.random.Generator | None = None) -> list[float]:
    """Compare analytic and central-difference directional derivatives.

    ``fn`` maps Tensors to a Tensor; its output is reduced with a fixed
    random weighting so every output element contributes.  Returns the
    relative error ``|a - n| / max(|a|, |n|, 1e-12)`` for each random probe
    direction.  The numeric side is a Richardson-extrapolated central
    difference, accurate to fourth order in ``h``.
    """
    rng = rng or np.random.default_rng(0)
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    wrt = list(range(len(inputs))) if wrt is None else list(wrt)
    weight = None

    def scalar(arrays, record_tape=False):
        nonlocal weight
        ts = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
        if record_tape:
            with Tape() as tape:
                out = fn(*ts)
        else:
            out = fn(*ts)
        if weight is None:
            weight = rng.standard_normal(out.shape)
        val = float((out.data * weight).sum())
        if not record_tape:
            return val
        grads = tape.gradient(out, [ts[i] for i in wrt], seed=weight)
        return val, grads

    _, grads = scalar(inputs, record_tape=True)
    errors = []
    for _ in range(probes):
        dirs = {i: rng.standard_normal(inputs[i].shape) for i in wrt}
        analytic = sum(float((g * dirs[i]).sum()) for i, g in zip(wrt, grads))
        numeric = _richardson(lambda s: scalar([x + s * dirs[i] if i in dirs else x
                                                for i, x in enumerate(inputs)]), h)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    return errors


def param_check(fn: Callable[[dict], Tensor], params: dict, names: Sequence[str] | None = None,
                probes: int = 5, h: float = 1e-4, rng: np.random.Generator | None = None) -> list[float]:
    """Directional check over a named parameter dict (e.g. a whole model)."""
    rng = rng or np.random.default_rng(0)
    names = list(params) if names is None else list(names)
    base = {k: np.asarray(getattr(v, "data", v)) for k, v in params.items()}
    weight = None

    def run(arrays, record_tape=False):
        nonlocal weight
        ts = {k: Tensor(a, requires_grad=k in names, name=k) for k, a in arrays.items()}
        if record_tape:
            with Tape() as tape:
                out = fn(ts)
        else:
            out = fn(ts)
        if weight is None:
            weight = rng.standard_normal(out.shape)
        val = float((out.data * weight).sum())
        if not record_tape:
            return val
        return val, tape.gradient(out, [ts[k] for k in names], seed=weight)

    _, grads = run(base, record_tape=True)
    errors = []
    for _ in range(probes):
        dirs = {k: rng.standard_normal(base[k].shape) for k in names}
        analytic = sum(float((g * dirs[k]).sum()) for k, g in zip(names, grads))
        numeric = _richardson(lambda s: run({k: a + s * dirs[k] if k in dirs else a
                                             for k, a in base.items()}), h)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    return errors
