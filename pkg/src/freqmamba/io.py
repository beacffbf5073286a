"""Point-cloud files, run configuration text and synthetic shape datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .geometry import PointCloud, normalize_unit_cube
from .model import ModelConfig

__all__ = [
    "read_xyz", "write_xyz", "write_ply", "XyzFormatError", "RunConfig", "ConfigError",
    "SHAPE_KINDS", "SyntheticShape", "synth_dataset", "stack_clouds",
]


class XyzFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- xyz / ply

def read_xyz(path) -> PointCloud:
    """Parse whitespace-separated ``x y z [score]`` rows.

    Blank lines and ``#`` comments are skipped.  A fourth column, if present
    on every row, becomes the score feature.
    """
    rows, width = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) not in (3, 4):
                raise XyzFormatError(f"{path}:{lineno}: expected 3 or 4 columns, got {len(parts)}")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise XyzFormatError(f"{path}:{lineno}: row has {len(parts)} columns, file started with {width}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise XyzFormatError(f"{path}:{lineno}: non-numeric value in {text!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise XyzFormatError(f"{path}:{lineno}: non-finite value in {text!r}")
            rows.append(vals)
    if not rows:
        raise XyzFormatError(f"{path}: no points")
    arr = np.array(rows)
    return PointCloud(arr[:, :3], arr[:, 3] if width == 4 else None)


def write_xyz(pc, path, scores=None) -> None:
    """Write coordinates (and optional scores) with full float64 precision."""
    if isinstance(pc, PointCloud):
        coords = pc.coords
        if scores is None and pc.features is not None and pc.features.shape[1] == 1:
            scores = pc.features[:, 0]
    else:
        coords = PointCloud(pc).coords
    table = coords if scores is None else np.column_stack([coords, np.asarray(scores, dtype=np.float64)])
    np.savetxt(path, table, fmt="%.17g")


def write_ply(pc, path) -> None:
    """Binary little-endian PLY with vertex positions only."""
    coords = pc.coords if isinstance(pc, PointCloud) else PointCloud(pc).coords
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(coords)}\n"
              "property double x\nproperty double y\nproperty double z\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(coords, dtype="<f8").tobytes())


# ---------------------------------------------------------------- run config

@dataclass(frozen=True)
class RunConfig:
    """Flat ``key = value`` run description shared by ``train`` and ``sample``.

    Keys use the short names of the command line (``N``, ``M``, ``D``, ``L``,
    ...).  Model-shape keys feed :class:`ModelConfig`; the rest drive data
    generation and optimization.
    """

    shape: str = "cube_edges"
    dataset_size: int = 200
    N: int = 2048
    M: int = 256
    D: int = 512
    depth: int = 8
    curves: str = "z,z_trans"
    k: int = 32
    zeta: float = 0.875
    tau: int = 50
    T: int = 1000
    L: int = 16
    bits: int = 6
    n_state: int = 16
    expand: int = 2
    hidden: int = 32
    enc_layers: int = 3
    dec_layers: int = 1
    dec_hidden: int = 0
    batch: int = 32
    lr: float = 2e-4
    lr_decay: float = 0.98
    decay_every: int = 100
    weight_decay: float = 0.0
    epochs: int = 10000
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPE_KINDS:
            raise ConfigError(f"unknown shape {self.shape!r}; choose from {', '.join(SHAPE_KINDS)}")
        for name in ("dataset_size", "batch", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_points=self.N, n_latent=self.M, latent_dim=self.D, depth=self.depth,
            curves=tuple(c.strip() for c in self.curves.split(",")), resolution=self.L,
            tau=self.tau, zeta=self.zeta, k=self.k, T=self.T, bits=self.bits,
            n_state=self.n_state, expand=self.expand, hidden=self.hidden,
            enc_layers=self.enc_layers, dec_layers=self.dec_layers, dec_hidden=self.dec_hidden)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
            key, raw = (s.strip() for s in body.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = _parse(raw, kinds[key], key, lineno)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw: str, kind, key: str, lineno: int):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
            return val
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects {kind}, got {raw!r}") from None
    return raw


# ---------------------------------------------------------------- synthetic shapes

SHAPE_KINDS = ("sphere", "cube_edges", "torus", "two_planes")
EDGE_FRACTION = 0.8


@dataclass(frozen=True)
class SyntheticShape:
    """A parametric surface with per-instance jitter, sampled before normalization."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def draw(cls, kind: str, rng: np.random.Generator) -> "SyntheticShape":
        if kind == "sphere":
            params = {"radius": rng.uniform(0.5, 1.5), "center": rng.normal(0.0, 1.0, 3)}
        elif kind == "cube_edges":
            params = {"sides": rng.uniform(0.6, 1.0, 3), "edge_fraction": EDGE_FRACTION}
        elif kind == "torus":
            params = {"major": 1.0, "minor": rng.uniform(0.2, 0.45)}
        elif kind == "two_planes":
            params = {"gap": rng.uniform(0.3, 0.8), "shift": rng.uniform(-0.2, 0.2, 2)}
        else:
            raise ValueError(f"unknown shape {kind!r}; choose from {', '.join(SHAPE_KINDS)}")
        return cls(kind, params, int(rng.integers(2 ** 31)))

    def sample(self, n: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return getattr(self, "_" + self.kind)(n, rng)

    def _sphere(self, n, rng):
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.params["center"] + self.params["radius"] * v

    def _cube_edges(self, n, rng):
        sides = np.asarray(self.params["sides"])
        n_edge = int(round(self.params["edge_fraction"] * n))
        # 12 edges: 4 parallel to each axis, chosen with probability ~ length
        axis = rng.choice(3, size=n_edge, p=sides / sides.sum())
        pts = rng.integers(0, 2, size=(n, 3)) * sides
        pts = pts.astype(np.float64)
        rows = np.arange(n_edge)
        pts[rows, axis] = rng.uniform(0.0, 1.0, n_edge) * sides[axis]
        # remaining points on faces, choosing the fixed axis by face area
        rest = np.arange(n_edge, n)
        area = np.array([sides[1] * sides[2], sides[0] * sides[2], sides[0] * sides[1]])
        fixed = rng.choice(3, size=len(rest), p=area / area.sum())
        free = rng.uniform(0.0, 1.0, (len(rest), 3)) * sides
        free[np.arange(len(rest)), fixed] = pts[rest, fixed]
        pts[rest] = free
        return pts

    def _torus(self, n, rng):
        R, r = self.params["major"], self.params["minor"]
        out = np.empty((0, 2))
        while len(out) < n:
            # rejection on the area element (R + r cos phi)
            cand = rng.uniform(0.0, 2 * np.pi, (2 * n, 2))
            keep = rng.uniform(0.0, R + r, 2 * n) < R + r * np.cos(cand[:, 1])
            out = np.concatenate([out, cand[keep]])
        th, ph = out[:n, 0], out[:n, 1]
        ring = R + r * np.cos(ph)
        return np.column_stack([ring * np.cos(th), ring * np.sin(th), r * np.sin(ph)])

    def _two_planes(self, n, rng):
        top = rng.random(n) < 0.5
        xy = rng.uniform(0.0, 1.0, (n, 2))
        xy[top] += self.params["shift"]
        z = np.where(top, self.params["gap"], 0.0)
        return np.column_stack([xy, z])


def synth_dataset(kind: str, count: int, n_points: int, seed: int = 0,
                  as_array: bool = False):
    """``count`` jittered instances of one shape, each scaled into ``[0, 1]^3``.

    Returns a list of normalized :class:`PointCloud` (or a ``(count, N, 3)``
    array with ``as_array=True``).  Deterministic given ``seed``.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape {kind!r}; choose from {', '.join(SHAPE_KINDS)}")
    rng = np.random.default_rng(seed)
    raw = np.stack([SyntheticShape.draw(kind, rng).sample(n_points) for _ in range(count)])
    unit, _, _ = normalize_unit_cube(raw)
    if as_array:
        return unit
    return [PointCloud(c, normalized=True) for c in unit]


def stack_clouds(clouds) -> np.ndarray:
    """Stack equally sized clouds into ``(S, N, 3)``."""
    arrs = [c.coords if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64) for c in clouds]
    sizes = {len(a) for a in arrs}
    if len(sizes) != 1:
        raise ValueError(f"clouds differ in size: {sorted(sizes)}")
    return np.stack(arrs)
