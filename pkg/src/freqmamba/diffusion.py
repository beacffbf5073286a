"""DDPM noise schedule, corruption, loss, ancestral sampler and trainer."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import AdamState, Tape, Tensor, TrainingError, adam_step, ops, save_checkpoint
from .model import ModelConfig, eps_theta, init_params

log = logging.getLogger(__name__)

__all__ = [
    "NoiseSchedule", "make_schedule", "q_sample", "ddpm_loss", "p_sample_step", "sample_loop",
    "sample", "DataTransform", "TrainResult", "train", "write_loss_csv", "save_model",
]

Denoiser = Callable[[np.ndarray, np.ndarray], "Tensor | np.ndarray"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step quantities indexed by ``t = 1..T`` (entry 0 is unused padding).

    Keeping index 0 as a dummy lets ``alpha[t]`` read like the usual
    one-based notation.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timesteps must lie in [1, {self.T}], got {np.unique(t)[:5]}")
        return t


def make_schedule(T: int = 1000, beta_start: float | None = None,
                  beta_end: float | None = None) -> NoiseSchedule:
    """Linear beta ramp.

    The defaults ``[1e-4, 0.02]`` are tuned for ``T=1000``; for other step
    counts both ends are scaled by ``1000 / T`` so the total noise injected
    stays comparable (``T=100`` gives ``[1e-3, 0.2]``).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    scale = 1000.0 / T
    beta_start = 1e-4 * scale if beta_start is None else beta_start
    beta_end = min(0.02 * scale, 0.999) if beta_end is None else beta_end
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T, beta, alpha, alpha_bar, beta.copy())


def q_sample(x0, t, eps0, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal ``sqrt(ab) x0 + sqrt(1 - ab) eps0``.

    ``t`` is a scalar or one step per leading batch item.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps0 = np.asarray(eps0, dtype=np.float64)
    t = schedule.check_t(t)
    ab = schedule.alpha_bar[t].reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps0


def ddpm_loss(denoiser: Denoiser, x0, t, eps0, schedule: NoiseSchedule) -> Tensor:
    """Mean squared noise-prediction error over batch, points and axes.

    Raises
    ------
    TrainingError
        If the loss is not finite; the message names the offending batch rows.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps0 = np.asarray(eps0, dtype=np.float64)
    t = np.broadcast_to(schedule.check_t(t), x0.shape[:1])
    x_t = q_sample(x0, t, eps0, schedule)
    pred = denoiser(x_t, t)
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    loss = ops.mse(pred, eps0)
    if not np.isfinite(loss.data):
        per = ((pred.data - eps0) ** 2).reshape(len(x0), -1).mean(axis=1)
        bad = np.flatnonzero(~np.isfinite(per)).tolist()
        raise TrainingError(f"non-finite loss for batch rows {bad} (timesteps {t[bad].tolist()})")
    return loss


def p_sample_step(denoiser: Denoiser, x_t, t: int, schedule: NoiseSchedule, noise=None) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``; no noise is added at ``t = 1``."""
    t = int(schedule.check_t(t))
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = denoiser(x_t, np.full(len(x_t), t))
    eps = np.asarray(getattr(eps, "data", eps))
    a, ab, b = schedule.alpha[t], schedule.alpha_bar[t], schedule.beta[t]
    mean = (x_t - b / math.sqrt(1.0 - ab) * eps) / math.sqrt(a)
    if t == 1 or noise is None:
        return mean
    return mean + math.sqrt(schedule.sigma2[t]) * np.asarray(noise, dtype=np.float64)


def sample_loop(denoiser: Denoiser, x_T, schedule: NoiseSchedule, noise=None,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Run ``p_sample_step`` from ``t = T`` down to 1.

    ``noise`` supplies the per-step draws: a callable ``noise(t, shape)``, an
    array indexed by ``t`` (replayed draws), or ``None`` to draw from ``rng``.
    """
    x = np.asarray(x_T, dtype=np.float64)
    rng = rng or np.random.default_rng(0)
    for t in range(schedule.T, 0, -1):
        if t == 1:
            z = None
        elif callable(noise):
            z = noise(t, x.shape)
        elif noise is not None:
            z = noise[t]
        else:
            z = rng.standard_normal(x.shape)
        x = p_sample_step(denoiser, x, t, schedule, z)
    return x


@dataclass(frozen=True)
class DataTransform:
    """Affine map from data coordinates to the diffusion frame.

    The whole dataset shares one per-axis centre and one scalar scale so
    relative shape and size survive normalization.
    """

    center: np.ndarray
    scale: float

    @classmethod
    def fit(cls, data: np.ndarray) -> "DataTransform":
        data = np.asarray(data, dtype=np.float64)
        pts = data.reshape(-1, 3)
        center = pts.mean(axis=0)
        scale = float((pts - center).std())
        return cls(center, scale if scale > 0 else 1.0)

    @classmethod
    def identity(cls) -> "DataTransform":
        return cls(np.zeros(3), 1.0)

    def forward(self, x):
        return (np.asarray(x, dtype=np.float64) - self.center) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.scale + self.center

    def as_tensors(self) -> dict:
        return {"data.center": self.center, "data.scale": np.array([self.scale])}

    @classmethod
    def from_tensors(cls, tensors: dict) -> "DataTransform":
        if "data.center" not in tensors:
            return cls.identity()
        return cls(np.asarray(tensors["data.center"], dtype=np.float64),
                   float(np.asarray(tensors["data.scale"]).ravel()[0]))


def sample(params: dict, config: ModelConfig, schedule: NoiseSchedule, count: int = 1,
           seed: int = 0, transform: DataTransform | None = None, batch: int = 32) -> np.ndarray:
    """Generate ``count`` clouds of ``config.n_points`` points.

    Deterministic given ``seed``: each cloud uses its own child stream, so
    ``batch`` only changes floating-point rounding in the batched products.
    """
    transform = transform or DataTransform.identity()
    children = np.random.SeedSequence(seed).spawn(count)
    out = np.empty((count, config.n_points, 3))

    def denoiser(x, t):
        return eps_theta(x, t, params, config).data

    for lo in range(0, count, batch):
        rngs = [np.random.default_rng(s) for s in children[lo:lo + batch]]
        x_T = np.stack([r.standard_normal((config.n_points, 3)) for r in rngs])

        def noise(t, shape, rngs=rngs):
            return np.stack([r.standard_normal(shape[1:]) for r in rngs])

        out[lo:lo + len(rngs)] = transform.inverse(sample_loop(denoiser, x_T, schedule, noise))
    return out


@dataclass
class TrainResult:
    params: dict
    losses: list = field(default_factory=list)
    transform: DataTransform = field(default_factory=DataTransform.identity)
    state: AdamState | None = None


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(losses, start=1):
            w.writerow([i, repr(float(v))])


def train(dataset, config: ModelConfig, schedule: NoiseSchedule | None = None, epochs: int = 1,
          batch: int = 32, seed: int = 0, lr: float = 2e-4, lr_decay: float = 0.98,
          decay_every: int = 100, weight_decay: float = 0.0, params: dict | None = None,
          checkpoint_every: int = 0, checkpoint_path=None, config_text: str | None = None,
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Fit the noise predictor with Adam on uniformly drawn timesteps.

    Parameters
    ----------
    dataset : array, shape (S, N, 3)
        Training clouds in data coordinates.
    lr_decay, decay_every
        Learning rate is multiplied by ``lr_decay`` every ``decay_every`` epochs.
    checkpoint_every
        Write ``checkpoint_path`` every this many epochs (0 disables).

    Raises
    ------
    TrainingError
        If the epoch loss stays above 10x the first epoch's for 3 epochs in a
        row, or on non-finite losses/gradients.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 3 or len(data) == 0:
        raise ValueError(f"dataset must be a non-empty (S, N, 3) array, got shape {data.shape}")
    if data.shape[1] != config.n_points:
        raise ValueError(f"clouds have {data.shape[1]} points but the model expects {config.n_points}")
    schedule = schedule or make_schedule(config.T)
    transform = DataTransform.fit(data)
    z = transform.forward(data)
    init_seq, run_seq = np.random.SeedSequence(seed).spawn(2)
    if params is None:
        params = init_params(config, int(init_seq.generate_state(1)[0]))
    rng = np.random.default_rng(run_seq)
    state = AdamState(lr=lr, weight_decay=weight_decay)
    names = list(params)
    losses: list[float] = []
    above = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(z))
        total, seen = 0.0, 0
        for lo in range(0, len(z), batch):
            idx = order[lo:lo + batch]
            x0 = z[idx]
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            eps0 = rng.standard_normal(x0.shape)
            with Tape() as tape:
                loss = ddpm_loss(lambda x, tt: eps_theta(x, tt, params, config), x0, t, eps0, schedule)
            grads = tape.gradient(loss, [params[k] for k in names])
            params = adam_step(params, dict(zip(names, grads)), state)
            total += float(loss.data) * len(idx)
            seen += len(idx)
        losses.append(total / seen)
        log.info("epoch %d loss %.6f lr %.3g", epoch, losses[-1], state.lr)
        if callback is not None:
            callback(epoch, losses[-1])
        above = above + 1 if losses[-1] > 10.0 * losses[0] else 0
        if above >= 3:
            raise TrainingError(
                f"training diverged: epoch losses {losses[-3:]} exceed 10x the first epoch ({losses[0]:.4g})")
        if decay_every and epoch % decay_every == 0:
            state.lr *= lr_decay
        if checkpoint_every and checkpoint_path and epoch % checkpoint_every == 0:
            save_model(checkpoint_path, params, transform, config_text)
    return TrainResult(params, losses, transform, state)


def save_model(path, params: dict, transform: DataTransform, config_text: str | None = None) -> None:
    tensors = {k: getattr(v, "data", v) for k, v in params.items()}
    tensors.update(transform.as_tensors())
    save_checkpoint(Path(path), tensors, config_text)
