"""k-NN graph high-pass filtering and the time-variant point sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import farthest_point_sampling, knn

__all__ = [
    "SpatialGraph", "FrequencyScore", "build_graph", "high_pass_filter",
    "frequency_order", "split_counts", "time_variant_sample",
]


@dataclass(frozen=True)
class SpatialGraph:
    """k-NN graph stored as a neighbour table with row-stochastic weights.

    ``neighbors[i]`` lists the ``k`` neighbours of node ``i`` and
    ``weights[i]`` their normalized Gaussian weights (summing to one).
    Dense adjacency views are built on demand.
    """

    neighbors: np.ndarray
    weights: np.ndarray
    bandwidth: float

    @property
    def n(self) -> int:
        return len(self.neighbors)

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    @property
    def unweighted(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        np.put_along_axis(A, self.neighbors, 1.0, axis=1)
        return A

    @property
    def weighted(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        np.put_along_axis(A, self.neighbors, self.weights, axis=1)
        return A


@dataclass(frozen=True)
class FrequencyScore:
    scores: np.ndarray
    order: np.ndarray


def build_graph(coords: np.ndarray, k: int, bandwidth: float | None = None) -> SpatialGraph:
    """Gaussian-weighted k-NN graph with rows normalized to sum to one.

    ``bandwidth`` defaults to the mean k-NN distance of the cloud (1.0 if
    every point coincides).
    """
    coords = np.asarray(coords, dtype=np.float64)
    idx, dist = knn(coords, k, return_dists=True)
    if bandwidth is None:
        bandwidth = float(dist.mean())
        if not bandwidth > 0.0:
            bandwidth = 1.0
    elif not bandwidth > 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    raw = np.exp(-(dist / bandwidth) ** 2)
    # weights underflow only when a neighbour is hundreds of bandwidths away
    raw = np.where(raw.sum(axis=1, keepdims=True) > 0.0, raw, 1.0)
    return SpatialGraph(idx, raw / raw.sum(axis=1, keepdims=True), float(bandwidth))


def high_pass_filter(graph: SpatialGraph, signal: np.ndarray) -> np.ndarray:
    """Apply ``I - A_w``: each row minus the weighted mean of its neighbours."""
    s = np.asarray(signal, dtype=np.float64)
    vec = s.ndim == 1
    if vec:
        s = s[:, None]
    if len(s) != graph.n:
        raise ValueError(f"signal has {len(s)} rows, graph has {graph.n} nodes")
    out = s - np.einsum("nk,nkd->nd", graph.weights, s[graph.neighbors])
    return out[:, 0] if vec else out


def frequency_order(coords: np.ndarray, graph: SpatialGraph) -> FrequencyScore:
    """Score points by the l2 norm of their filtered coordinates.

    The order lists indices from highest to lowest score, lower index first
    among equal scores.
    """
    scores = np.linalg.norm(high_pass_filter(graph, coords), axis=1)
    order = np.argsort(-scores, kind="stable")
    return FrequencyScore(scores, order)


def split_counts(M: int, zeta: float) -> tuple[int, int]:
    """(high-frequency, FPS) budget: ``round(zeta*M)`` with halves rounded down."""
    n_freq = max(0, min(M, math.ceil(zeta * M - 0.5)))
    return n_freq, M - n_freq


def time_variant_sample(coords: np.ndarray, M: int, t: int, tau: int, zeta: float,
                        graph: SpatialGraph | None = None, k: int = 32,
                        seed_index: int = 0, T: int | None = None) -> np.ndarray:
    """Pick ``M`` point indices, mixing frequency and FPS selection by timestep.

    For ``t <= tau`` the ``round(zeta*M)`` highest-scoring points are taken
    first and the rest are filled by FPS over the remaining points, seeded
    from the top-scoring point.  For ``t > tau`` the result is plain FPS from
    ``seed_index``.  ``graph`` is built with ``k`` neighbours when omitted.
    """
    coords = np.asarray(coords, dtype=np.float64)
    N = len(coords)
    if M > N:
        raise ValueError(f"cannot select M={M} points from a cloud of N={N}")
    if not 0.0 <= zeta <= 1.0:
        raise ValueError(f"zeta must lie in [0, 1], got {zeta}")
    if t < 0 or (T is not None and t > T):
        raise ValueError(f"timestep {t} outside [0, {T}]")
    n_freq, n_fps = split_counts(M, zeta)
    if t > tau or n_freq == 0:
        return farthest_point_sampling(coords, M, seed_index)
    if graph is None:
        graph = build_graph(coords, min(k, N - 1))
    top = frequency_order(coords, graph).order[:n_freq]
    if n_fps == 0:
        return top
    rest = np.ones(N, dtype=bool)
    rest[top] = False
    seed_dist = ((coords - coords[top[0]]) ** 2).sum(axis=1)
    fill = farthest_point_sampling(coords, n_fps, candidates=rest, init_dist=seed_dist)
    return np.concatenate([top, fill])
