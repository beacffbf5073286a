"""Point-cloud kernels: voxel scatter-mean, trilinear query, FPS and k-NN.

All routines are plain numpy over ``(N, 3)`` coordinate arrays.  Voxel and
query coordinates must lie in the unit cube; cell ``i`` along an axis covers
``[i/L, (i+1)/L)`` and has its centre at ``(i + 0.5)/L``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "PointCloud", "VoxelGrid", "normalize_unit_cube", "voxel_indices", "voxelize",
    "trilinear_weights", "trilinear_query", "scatter_mean_matrix", "trilinear_matrix",
    "farthest_point_sampling", "farthest_point_sampling_batch", "pairwise_sq_dists", "knn",
]


@dataclass(frozen=True)
class PointCloud:
    coords: np.ndarray
    features: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3 or len(c) < 1:
            raise ValueError(f"point cloud needs shape (N>=1, 3), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("point cloud has non-finite coordinates")
        if self.normalized and (c.min() < 0.0 or c.max() > 1.0):
            raise ValueError("normalized point cloud has coordinates outside [0, 1]")
        object.__setattr__(self, "coords", c)
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim == 1:
                f = f[:, None]
            if len(f) != len(c):
                raise ValueError(f"{len(f)} feature rows for {len(c)} points")
            object.__setattr__(self, "features", f)

    def __len__(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class VoxelGrid:
    values: np.ndarray  # (L, L, L, D)
    counts: np.ndarray  # (L, L, L)

    @property
    def resolution(self) -> int:
        return self.counts.shape[0]


def normalize_unit_cube(coords: np.ndarray, eps: float = 1e-12):
    """Uniformly rescale and centre points into ``[0, 1]^3``.

    Returns ``(normalized, center, scale)`` with
    ``normalized = (coords - center) * scale + 0.5``.  Works on ``(N, 3)``
    or batched ``(B, N, 3)`` input (one transform per cloud).
    """
    c = np.asarray(coords, dtype=np.float64)
    lo = c.min(axis=-2, keepdims=True)
    hi = c.max(axis=-2, keepdims=True)
    center = 0.5 * (lo + hi)
    extent = (hi - lo).max(axis=-1, keepdims=True)
    scale = 1.0 / np.maximum(extent, eps)
    out = np.clip((c - center) * scale + 0.5, 0.0, 1.0)
    return out, center, scale


def _check_unit(coords: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(((coords < 0.0) | (coords > 1.0) | ~np.isfinite(coords)).any(axis=-1).ravel())
    if bad.size:
        raise ValueError(f"{what} outside [0, 1]^3 at index {bad[:10].tolist()}")


def voxel_indices(coords: np.ndarray, L: int) -> np.ndarray:
    """Integer cell ``floor(c * L)`` per point, with 1.0 clamped into the last cell."""
    return np.minimum(np.floor(np.asarray(coords) * L).astype(np.int64), L - 1)


def _flat_cell(cells: np.ndarray, L: int) -> np.ndarray:
    return (cells[..., 0] * L + cells[..., 1]) * L + cells[..., 2]


def voxelize(pc: PointCloud, L: int) -> VoxelGrid:
    """Average point features into an ``L^3`` grid; empty cells stay zero."""
    if pc.features is None:
        raise ValueError("voxelize needs per-point features")
    _check_unit(pc.coords, "voxelize coordinates")
    flat = _flat_cell(voxel_indices(pc.coords, L), L)
    D = pc.features.shape[1]
    counts = np.bincount(flat, minlength=L ** 3).astype(np.float64)
    sums = np.zeros((L ** 3, D))
    np.add.at(sums, flat, pc.features)
    values = sums / np.maximum(counts, 1.0)[:, None]
    return VoxelGrid(values.reshape(L, L, L, D), counts.reshape(L, L, L))


def scatter_mean_matrix(coords: np.ndarray, L: int) -> sp.csr_matrix:
    """Sparse ``(B*L^3, B*N)`` operator averaging point rows into cells.

    ``coords`` is ``(B, N, 3)`` in the unit cube; rows are ordered
    batch-major then cell index, matching ``values.reshape(B*L^3, D)``.
    """
    coords = np.asarray(coords)
    B, N = coords.shape[:2]
    flat = _flat_cell(voxel_indices(coords, L), L) + (np.arange(B) * L ** 3)[:, None]
    flat = flat.ravel()
    counts = np.bincount(flat, minlength=B * L ** 3).astype(np.float64)
    data = 1.0 / counts[flat]
    return sp.csr_matrix((data, (flat, np.arange(B * N))), shape=(B * L ** 3, B * N))


def trilinear_weights(queries: np.ndarray, L: int):
    """Eight corner cells and blend weights for each query.

    Returns ``(cells, weights)`` with shapes ``(..., 8)`` (flat cell index)
    and ``(..., 8)``; weights sum to one.
    """
    q = np.asarray(queries, dtype=np.float64)
    u = q * L - 0.5
    r = np.round(u)
    u = np.where(np.abs(u - r) < 1e-9, r, u)  # snap exact centres
    lo = np.floor(u)
    frac = u - lo
    lo = lo.astype(np.int64)
    i0 = np.clip(lo, 0, L - 1)
    i1 = np.clip(lo + 1, 0, L - 1)
    cells, weights = [], []
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                ix = i1[..., 0] if dx else i0[..., 0]
                iy = i1[..., 1] if dy else i0[..., 1]
                iz = i1[..., 2] if dz else i0[..., 2]
                wx = frac[..., 0] if dx else 1.0 - frac[..., 0]
                wy = frac[..., 1] if dy else 1.0 - frac[..., 1]
                wz = frac[..., 2] if dz else 1.0 - frac[..., 2]
                cells.append((ix * L + iy) * L + iz)
                weights.append(wx * wy * wz)
    return np.stack(cells, axis=-1), np.stack(weights, axis=-1)


def trilinear_query(grid: VoxelGrid, queries: np.ndarray) -> np.ndarray:
    """Blend cell-centre values at query points, clamping at the boundary."""
    queries = np.asarray(queries, dtype=np.float64)
    _check_unit(queries, "trilinear query")
    L = grid.resolution
    cells, w = trilinear_weights(queries, L)
    flat = grid.values.reshape(L ** 3, -1)
    return np.einsum("mk,mkd->md", w, flat[cells])


def trilinear_matrix(queries: np.ndarray, L: int) -> sp.csr_matrix:
    """Sparse ``(B*M, B*L^3)`` trilinear gather for batched queries ``(B, M, 3)``."""
    queries = np.asarray(queries)
    _check_unit(queries, "trilinear query")
    B, M = queries.shape[:2]
    cells, w = trilinear_weights(queries, L)
    cells = cells + (np.arange(B) * L ** 3)[:, None, None]
    rows = np.repeat(np.arange(B * M), 8)
    return sp.csr_matrix((w.ravel(), (rows, cells.ravel())), shape=(B * M, B * L ** 3))


def farthest_point_sampling(coords: np.ndarray, M: int, seed_index: int = 0,
                            candidates: np.ndarray | None = None,
                            init_dist: np.ndarray | None = None) -> np.ndarray:
    """Greedy max-min subset of ``M`` point indices.

    Starts from ``seed_index`` and repeatedly adds the point farthest from
    the current selection; ties go to the lowest index.  With ``candidates``
    (a boolean mask) only those points may be chosen, and ``init_dist``
    seeds the running squared distance instead of the seed point.
    """
    coords = np.asarray(coords, dtype=np.float64)
    N = len(coords)
    if not 1 <= M <= N:
        raise ValueError(f"farthest point sampling needs 1 <= M <= N, got M={M}, N={N}")
    out = np.empty(M, dtype=np.int64)
    if init_dist is None:
        out[0] = seed_index
        dist = ((coords - coords[seed_index]) ** 2).sum(axis=1)
        start = 1
    else:
        dist = np.asarray(init_dist, dtype=np.float64).copy()
        start = 0
    if candidates is not None:
        if candidates.sum() < M - start:
            raise ValueError("not enough candidate points for farthest point sampling")
        dist = np.where(candidates, dist, -np.inf)
    if start:
        dist[seed_index] = -np.inf
    for i in range(start, M):
        j = int(np.argmax(dist))
        out[i] = j
        dist = np.minimum(dist, ((coords - coords[j]) ** 2).sum(axis=1))
        dist[j] = -np.inf
    return out


def farthest_point_sampling_batch(coords: np.ndarray, M: int, seed_index=0) -> np.ndarray:
    """Vectorized FPS over ``(B, N, 3)``; ``seed_index`` may be per cloud."""
    coords = np.asarray(coords, dtype=np.float64)
    B, N = coords.shape[:2]
    if not 1 <= M <= N:
        raise ValueError(f"farthest point sampling needs 1 <= M <= N, got M={M}, N={N}")
    seeds = np.broadcast_to(np.asarray(seed_index, dtype=np.int64), (B,))
    rows = np.arange(B)
    out = np.empty((B, M), dtype=np.int64)
    out[:, 0] = seeds
    dist = ((coords - coords[rows, seeds][:, None]) ** 2).sum(axis=2)
    dist[rows, seeds] = -np.inf
    for i in range(1, M):
        j = np.argmax(dist, axis=1)
        out[:, i] = j
        dist = np.minimum(dist, ((coords - coords[rows, j][:, None]) ** 2).sum(axis=2))
        dist[rows, j] = -np.inf
    return out


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances between rows of ``a`` and ``b``."""
    diff = np.asarray(a, dtype=np.float64)[:, None, :] - np.asarray(b, dtype=np.float64)[None, :, :]
    return (diff * diff).sum(axis=-1)


def knn(coords: np.ndarray, k: int, return_dists: bool = False):
    """Indices of the ``k`` nearest other points for every point.

    Self is excluded and ties are broken by lower index.  With
    ``return_dists`` also returns the matching Euclidean distances.
    """
    coords = np.asarray(coords, dtype=np.float64)
    N = len(coords)
    if not 1 <= k <= N - 1:
        raise ValueError(f"knn needs 1 <= k <= N-1, got k={k}, N={N}")
    d2 = pairwise_sq_dists(coords, coords)
    np.fill_diagonal(d2, np.inf)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    if return_dists:
        return idx, np.sqrt(np.take_along_axis(d2, idx, axis=1))
    return idx
