"""The noise predictor: voxel encoder, two serialized Mamba streams, voxel decoder."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from . import curves
from .autodiff import Tensor, as_tensor, conv3d, group_norm, linear, ops, timestep_embedding
from .geometry import (farthest_point_sampling_batch, normalize_unit_cube, scatter_mean_matrix,
                       trilinear_matrix)
from .spectral import time_variant_sample
from .ssm import BlockShape, init_mamba_block, mamba_stack

__all__ = [
    "ModelConfig", "LatentCloud", "EncoderOutput", "init_params", "time_features",
    "select_latent_indices", "tf_encode", "dual_stream", "decode", "eps_theta",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults follow the full-size setting."""

    n_points: int = 2048
    n_latent: int = 256
    latent_dim: int = 512
    depth: int = 8
    curves: tuple = ("z", "z_trans")
    resolution: int = 16
    tau: int = 50
    zeta: float = 0.875
    k: int = 32
    T: int = 1000
    bits: int = 6
    n_state: int = 16
    expand: int = 2
    conv_width: int = 4
    hidden: int = 32
    enc_layers: int = 3
    dec_layers: int = 1
    dec_hidden: int = 0
    time_channels: int = 8
    groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(curves.canonical_kind(c) for c in self.curves))
        if not 1 <= self.n_latent <= self.n_points:
            raise ValueError(f"need 1 <= M <= N, got M={self.n_latent}, N={self.n_points}")
        if self.latent_dim % 2:
            raise ValueError(f"latent size must be even, got {self.latent_dim}")
        if self.depth < 1 or self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("depth and conv layer counts must be >= 1")
        if len(self.curves) != 2:
            raise ValueError("two curve kinds are required, one per stream")
        if self.dec_hidden < 0:
            raise ValueError(f"dec_hidden must be >= 0, got {self.dec_hidden}")
        for width in (self.hidden, self.latent_dim, self.dec_width):
            if width % self.groups:
                raise ValueError(f"{width} channels are not divisible into {self.groups} groups")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in [0, 1], got {self.zeta}")

    @property
    def d_inner(self) -> int:
        return self.expand * self.latent_dim

    @property
    def dec_width(self) -> int:
        """Decoder channel count; ``dec_hidden=0`` keeps the latent size."""
        return self.dec_hidden or self.latent_dim

    @property
    def dt_rank(self) -> int:
        return max(1, math.ceil(self.latent_dim / 16))

    def block_prefixes(self, stream: int) -> list:
        return [f"s{stream}.blk{i}." for i in range(self.depth)]

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]


@dataclass
class LatentCloud:
    features: Tensor          # (B, M, D)
    coords: np.ndarray        # (B, M, 3) in the unit cube
    indices: np.ndarray       # (B, M) rows of x_t that were kept


@dataclass
class EncoderOutput:
    latent: LatentCloud
    unit_coords: np.ndarray   # (B, N, 3) per-cloud unit-cube frame of x_t
    raw_coords: np.ndarray    # (B, N, 3)
    temb: Tensor              # (B, D)
    extras: dict = field(default_factory=dict)


def init_params(config: ModelConfig, seed: int = 0) -> dict:
    """Random initial weights keyed by dotted names."""
    rng = np.random.default_rng(seed)
    D, H, Ct = config.latent_dim, config.hidden, config.time_channels
    p: dict[str, np.ndarray] = {}

    def normal(*shape, fan_in, gain=1.0):
        return gain * rng.standard_normal(shape) / math.sqrt(fan_in)

    p["time.w1"] = normal(D, D, fan_in=D)
    p["time.b1"] = np.zeros(D)
    p["time.w2"] = normal(D, D, fan_in=D)
    p["time.b2"] = np.zeros(D)
    p["enc.t_w"] = normal(D, Ct, fan_in=D)
    chans = [3 + Ct] + [H] * (config.enc_layers - 1) + [D]
    for i in range(config.enc_layers):
        ci, co = chans[i], chans[i + 1]
        p[f"enc.conv{i}.w"] = normal(co, ci, 3, 3, 3, fan_in=27 * ci)
        p[f"enc.conv{i}.b"] = np.zeros(co)
        p[f"enc.gn{i}.g"] = np.ones(co)
        p[f"enc.gn{i}.b"] = np.zeros(co)
    p["lat.pos_w"] = normal(3, D, fan_in=3)
    p["lat.pos_b"] = np.zeros(D)
    for j in range(2):
        p[f"fuse.g{j}"] = np.ones(D)
        p[f"fuse.d{j}"] = np.zeros(D)
    p["fuse.proj_w"] = normal(2 * D, D, fan_in=2 * D)
    p["fuse.proj_b"] = np.zeros(D)
    E = config.dec_width
    if E != D:
        p["dec.in_w"] = normal(D, E, fan_in=D)
    for i in range(config.dec_layers):
        p[f"dec.conv{i}.w"] = normal(E, E, 3, 3, 3, fan_in=27 * E)
        p[f"dec.conv{i}.b"] = np.zeros(E)
        p[f"dec.gn{i}.g"] = np.ones(E)
        p[f"dec.gn{i}.b"] = np.zeros(E)
    p["dec.pt_w"] = normal(3, E, fan_in=3)
    p["dec.pt_b"] = np.zeros(E)
    p["dec.pt_t"] = normal(D, E, fan_in=D)
    p["dec.head_w"] = normal(E, 3, fan_in=E)
    p["dec.head_b"] = np.zeros(3)
    p["dec.skip_w"] = np.zeros((D, 3))
    p["dec.skip_b"] = np.zeros(3)
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
    shape = BlockShape(D, config.d_inner, config.n_state, config.dt_rank, config.conv_width, D)
    for j in range(2):
        for prefix in config.block_prefixes(j):
            params.update(init_mamba_block(rng, shape, prefix))
    return params


def time_features(params: dict, t, config: ModelConfig) -> Tensor:
    """Sinusoidal timestep embedding passed through a two-layer SiLU MLP."""
    emb = Tensor(timestep_embedding(t, config.latent_dim))
    h = ops.silu(linear(emb, params["time.w1"], params["time.b1"]))
    return linear(h, params["time.w2"], params["time.b2"])


def _fps_seed(unit: np.ndarray) -> np.ndarray:
    # point farthest from the centroid: independent of input order
    d = ((unit - unit.mean(axis=1, keepdims=True)) ** 2).sum(axis=2)
    return np.argmax(d, axis=1)


def select_latent_indices(unit: np.ndarray, t: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Time-variant subset of ``M`` rows per cloud of ``unit`` ``(B, N, 3)``."""
    B, N = unit.shape[:2]
    seeds = _fps_seed(unit)
    out = np.empty((B, config.n_latent), dtype=np.int64)
    late = (t <= config.tau) & (config.zeta > 0)
    early = ~late
    if early.any():
        out[early] = farthest_point_sampling_batch(unit[early], config.n_latent, seeds[early])
    for b in np.flatnonzero(late):
        out[b] = time_variant_sample(unit[b], config.n_latent, int(t[b]), config.tau, config.zeta,
                                     k=min(config.k, N - 1), seed_index=int(seeds[b]))
    return out


def _to_grid(flat: Tensor, B: int, L: int) -> Tensor:
    C = flat.shape[-1]
    return ops.transpose(ops.reshape(flat, (B, L, L, L, C)), (0, 4, 1, 2, 3))


def _from_grid(vol: Tensor) -> Tensor:
    B, C, L = vol.shape[:3]
    return ops.reshape(ops.transpose(vol, (0, 2, 3, 4, 1)), (B * L ** 3, C))


def _conv_block(x: Tensor, params: dict, prefix: str, i: int, groups: int) -> Tensor:
    x = conv3d(x, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"], stride=1, padding=1)
    x = group_norm(x, groups, params[f"{prefix}.gn{i}.g"], params[f"{prefix}.gn{i}.b"], axis=1)
    return ops.swish(x)


def tf_encode(x_t: np.ndarray, t, params: dict, config: ModelConfig,
              indices: np.ndarray | None = None) -> EncoderOutput:
    """Voxel features, time-variant point selection and latent query.

    ``x_t`` is ``(B, N, 3)``; ``t`` holds one integer timestep per cloud.
    ``indices`` overrides the sampler (used by tests).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    B, N = x_t.shape[:2]
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
    if np.any(t < 0) or np.any(t > config.T):
        raise ValueError(f"timesteps must lie in [0, {config.T}]")
    L = config.resolution
    unit, _, _ = normalize_unit_cube(x_t)
    temb = time_features(params, t, config)
    tfeat = linear(temb, params["enc.t_w"])
    tfeat = ops.add(ops.reshape(tfeat, (B, 1, tfeat.shape[1])), np.zeros((B, N, tfeat.shape[1])))
    feats = ops.concat([Tensor(x_t), tfeat], axis=2)
    grid = ops.sparse_apply(scatter_mean_matrix(unit, L), ops.reshape(feats, (B * N, feats.shape[2])))
    vol = _to_grid(grid, B, L)
    for i in range(config.enc_layers):
        vol = _conv_block(vol, params, "enc", i, config.groups)
    if indices is None:
        indices = select_latent_indices(unit, t, config)
    sel = np.take_along_axis(unit, indices[..., None], axis=1)
    q = ops.sparse_apply(trilinear_matrix(sel, L), _from_grid(vol))
    D = config.latent_dim
    feats = ops.reshape(q, (B, config.n_latent, D))
    feats = ops.add(feats, linear(Tensor(sel), params["lat.pos_w"], params["lat.pos_b"]))
    feats = ops.add(feats, ops.reshape(temb, (B, 1, D)))
    return EncoderOutput(LatentCloud(feats, sel, indices), unit, x_t, temb)


def dual_stream(latent: LatentCloud, params: dict, config: ModelConfig, temb=None) -> Tensor:
    """Two curve-ordered Mamba stacks fused by per-stream affine maps and a projection.

    Each stream sees the latent points in its own curve order; outputs are
    returned to input order before fusion so rows stay aligned.
    """
    if config.curves[0] == config.curves[1]:
        warnings.warn("both streams use the same curve ordering", stacklevel=2)
    outs = []
    for j, kind in enumerate(config.curves):
        perm = curves.serialize_batch(latent.coords, kind, config.bits)
        inv = np.argsort(perm, axis=1)
        z = ops.gather_rows(latent.features, perm, unique=True)
        z = mamba_stack(z, params, config.block_prefixes(j), temb)
        z = ops.gather_rows(z, inv, unique=True)
        outs.append(ops.add(ops.mul(z, params[f"fuse.g{j}"]), params[f"fuse.d{j}"]))
    return linear(ops.concat(outs, axis=2), params["fuse.proj_w"], params["fuse.proj_b"])


def decode(fused: Tensor, latent_coords: np.ndarray, unit_coords: np.ndarray,
           raw_coords: np.ndarray, temb: Tensor, params: dict, config: ModelConfig) -> Tensor:
    """Scatter latent features to a volume, convolve, query at every point, predict noise."""
    fused = as_tensor(fused)
    B, M, D = fused.shape
    N = unit_coords.shape[1]
    L = config.resolution
    E = config.dec_width
    if E != D:
        fused = linear(fused, params["dec.in_w"])
    grid = ops.sparse_apply(scatter_mean_matrix(latent_coords, L), ops.reshape(fused, (B * M, E)))
    vol = _to_grid(grid, B, L)
    for i in range(config.dec_layers):
        vol = _conv_block(vol, params, "dec", i, config.groups)
    q = ops.reshape(ops.sparse_apply(trilinear_matrix(unit_coords, L), _from_grid(vol)), (B, N, E))
    pt = linear(Tensor(raw_coords), params["dec.pt_w"], params["dec.pt_b"])
    pt = ops.add(pt, ops.reshape(linear(temb, params["dec.pt_t"]), (B, 1, E)))
    h = ops.silu(ops.add(q, pt))
    out = linear(h, params["dec.head_w"], params["dec.head_b"])
    # per-axis, time-dependent gain on x_t: at large t the noise is close to x_t
    # itself, which the nonlinear head only approximates
    gain = linear(temb, params["dec.skip_w"], params["dec.skip_b"])
    return ops.add(out, ops.mul(Tensor(raw_coords), ops.reshape(gain, (B, 1, 3))))


def eps_theta(x_t, t, params: dict, config: ModelConfig) -> Tensor:
    """Predicted noise for ``x_t`` ``(B, N, 3)`` (or a single ``(N, 3)`` cloud)."""
    x_t = np.asarray(getattr(x_t, "data", x_t), dtype=np.float64)
    single = x_t.ndim == 2
    if single:
        x_t = x_t[None]
    if x_t.ndim != 3 or x_t.shape[2] != 3:
        raise ValueError(f"x_t must have shape (B, N, 3), got {x_t.shape}")
    enc = tf_encode(x_t, t, params, config)
    fused = dual_stream(enc.latent, params, config, enc.temb)
    out = decode(fused, enc.latent.coords, enc.unit_coords, enc.raw_coords, enc.temb, params, config)
    return ops.reshape(out, out.shape[1:]) if single else out
