"""Set-to-set distances between clouds and generative-model evaluation scores."""

from __future__ import annotations

import csv
import math
import io as _io
from dataclasses import dataclass, fields

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "chamfer", "emd_exact", "emd_approx", "EmdApprox", "ConvergenceError",
    "PairwiseDistanceTable", "pairwise_table", "one_nna", "one_nna_from_tables",
    "one_nna_abs50", "coverage", "coverage_from_table", "nearest_reference_distance",
    "MetricReport", "evaluate", "EXACT_EMD_MAX",
]

EXACT_EMD_MAX = 512


class ConvergenceError(RuntimeError):
    pass


def _cloud(x, what="cloud") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3 or len(x) < 1:
        raise ValueError(f"{what} must have shape (n>=1, 3), got {x.shape}")
    return x


def _sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # explicit differences (not the |x|^2 - 2xy + |y|^2 expansion) so zero stays zero
    return ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=2)


def chamfer(X, Y) -> float:
    """Squared-distance Chamfer: mean nearest-neighbour term in each direction, summed.

    The means use a correctly rounded sum, so the value does not depend on
    point order.
    """
    X, Y = _cloud(X), _cloud(Y)
    d = _sq_dists(X, Y)
    return math.fsum(d.min(axis=1)) / len(X) + math.fsum(d.min(axis=0)) / len(Y)


def _emd_cost(X, Y) -> np.ndarray:
    X, Y = _cloud(X), _cloud(Y)
    if len(X) != len(Y):
        raise ValueError(f"EMD needs equal cardinalities, got {len(X)} and {len(Y)}")
    return np.sqrt(_sq_dists(X, Y))


def emd_exact(X, Y, max_points: int = EXACT_EMD_MAX) -> float:
    """Mean matched Euclidean distance under the optimal bijection."""
    cost = _emd_cost(X, Y)
    n = len(cost)
    if n > max_points:
        raise ValueError(f"exact EMD limited to {max_points} points, got {n}; use emd_approx")
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / n)


@dataclass(frozen=True)
class EmdApprox:
    """Auction result: ``value`` is a feasible matching cost, never below the optimum.

    ``value - gap <= exact <= value``.
    """

    value: float
    gap: float
    eps: float
    rounds: int

    def __float__(self) -> float:
        return self.value


def _auction_phase(benefit: np.ndarray, prices: np.ndarray, eps: float, budget: int):
    """Jacobi auction at fixed ``eps``; returns (person -> object, rounds used)."""
    n = len(benefit)
    owner = np.full(n, -1)
    assigned = np.full(n, -1)
    free = np.arange(n)
    rounds = 0
    while free.size:
        if rounds >= budget:
            return None, rounds
        rounds += 1
        vals = benefit[free] - prices
        r = np.arange(free.size)
        best = np.argmax(vals, axis=1)
        v1 = vals[r, best]
        if n > 1:
            vals[r, best] = -np.inf
            v2 = vals.max(axis=1)
        else:
            v2 = v1
        bids = prices[best] + (v1 - v2) + eps
        # highest bid per object wins; ties go to the lower person index
        order = np.lexsort((free, -bids, best))
        first = np.ones(order.size, dtype=bool)
        first[1:] = best[order[1:]] != best[order[:-1]]
        win = order[first]
        objs, people = best[win], free[win]
        prev = owner[objs]
        assigned[prev[prev >= 0]] = -1
        owner[objs] = people
        assigned[people] = objs
        prices[objs] = bids[win]
        free = np.flatnonzero(assigned < 0)
    return assigned, rounds


def emd_approx(X, Y, eps_final: float | None = None, max_rounds: int = 200000) -> EmdApprox:
    """EMD by auction with eps-scaling.

    ``eps`` starts at ``max_cost / 8`` and shrinks 4x per phase until it is
    at most ``eps_final`` (default ``1e-4 * max_cost``).  Each phase yields
    an assignment within ``n * eps`` of optimal in total cost; the lowest cost
    seen over all phases is returned, so a smaller ``eps_final`` can only
    lower the result.

    Raises
    ------
    ConvergenceError
        When the total bidding-round budget runs out; the message carries the
        best gap estimate so far.
    """
    cost = _emd_cost(X, Y)
    n = len(cost)
    top = float(cost.max())
    if top == 0.0:
        return EmdApprox(0.0, 0.0, 0.0, 0)
    eps_final = 1e-4 * top if eps_final is None else eps_final
    if eps_final <= 0:
        raise ValueError("eps_final must be positive")
    benefit = -cost
    prices = np.zeros(n)
    eps = top / 8.0
    best, gap, used = np.inf, np.inf, 0
    while True:
        assign, rounds = _auction_phase(benefit, prices, eps, max_rounds - used)
        used += rounds
        if assign is None:
            raise ConvergenceError(
                f"auction did not converge within {max_rounds} rounds at eps={eps:.3g}; "
                f"best cost {best:.6g} with gap <= {gap:.3g}")
        value = float(cost[np.arange(n), assign].sum() / n)
        best = min(best, value)
        gap = eps  # n * eps on the total, eps on the mean
        if eps <= eps_final:
            return EmdApprox(best, gap, eps, used)
        eps /= 4.0


# ---------------------------------------------------------------- set-level scores

@dataclass(frozen=True)
class PairwiseDistanceTable:
    values: np.ndarray      # (G, R)
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("distance table must be a finite, non-negative 2-D array")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def _pair_fn(kind: str, exact_emd_max: int):
    if kind == "cd":
        return chamfer
    if kind == "emd":
        def emd(a, b):
            if len(a) <= exact_emd_max:
                return emd_exact(a, b, max_points=exact_emd_max)
            return emd_approx(a, b).value
        return emd
    raise ValueError(f"distance kind must be 'cd' or 'emd', got {kind!r}")


def pairwise_table(gen, ref, kind: str = "cd", exact_emd_max: int = EXACT_EMD_MAX,
                   symmetric: bool = False) -> PairwiseDistanceTable:
    """Distance between every generated and every reference cloud.

    With ``symmetric=True`` (``gen is ref``) only the upper triangle is
    computed and the diagonal is zero.
    """
    fn = _pair_fn(kind, exact_emd_max)
    G, R = len(gen), len(ref)
    out = np.zeros((G, R))
    for i in range(G):
        for j in range(i + 1 if symmetric else 0, R):
            out[i, j] = fn(gen[i], ref[j])
            if symmetric:
                out[j, i] = out[i, j]
    return PairwiseDistanceTable(out, kind)


def one_nna_from_tables(d_gg, d_rr, d_gr) -> float:
    """Leave-one-out 1-NN accuracy (percent) from the three distance blocks.

    The pooled index lists generated clouds first; the lowest pooled index
    wins distance ties.
    """
    d_gg, d_rr, d_gr = (np.asarray(getattr(d, "values", d), dtype=np.float64) for d in (d_gg, d_rr, d_gr))
    G, R = d_gr.shape
    if G == 0 or R == 0:
        raise ValueError("both sets must be non-empty")
    pooled = np.block([[d_gg, d_gr], [d_gr.T, d_rr]])
    np.fill_diagonal(pooled, np.inf)
    labels = np.r_[np.zeros(G, dtype=int), np.ones(R, dtype=int)]
    nearest = np.argmin(pooled, axis=1)
    return float((labels[nearest] == labels).mean() * 100.0)


def one_nna(gen, ref, kind: str = "cd", exact_emd_max: int = EXACT_EMD_MAX) -> float:
    t = dict(kind=kind, exact_emd_max=exact_emd_max)
    return one_nna_from_tables(pairwise_table(gen, gen, symmetric=True, **t),
                               pairwise_table(ref, ref, symmetric=True, **t),
                               pairwise_table(gen, ref, **t))


def one_nna_abs50(x: float) -> float:
    """Distance of a 1-NNA percentage from the ideal 50."""
    if not 0.0 <= x <= 100.0:
        raise ValueError(f"1-NNA must lie in [0, 100], got {x}")
    return abs(x - 50.0)


def coverage_from_table(d_gr) -> float:
    """Percent of reference clouds that are the nearest match of some generated cloud."""
    d = np.asarray(getattr(d_gr, "values", d_gr), dtype=np.float64)
    if d.size == 0:
        raise ValueError("both sets must be non-empty")
    return float(np.unique(np.argmin(d, axis=1)).size / d.shape[1] * 100.0)


def coverage(gen, ref, kind: str = "cd", exact_emd_max: int = EXACT_EMD_MAX) -> float:
    return coverage_from_table(pairwise_table(gen, ref, kind, exact_emd_max))


def nearest_reference_distance(gen, ref, kind: str = "cd") -> np.ndarray:
    """For each generated cloud, the distance to its closest reference cloud."""
    return pairwise_table(gen, ref, kind).values.min(axis=1)


@dataclass(frozen=True)
class MetricReport:
    cd_1nna: float
    emd_1nna: float
    cd_1nna_abs50: float
    emd_1nna_abs50: float
    cov_cd: float
    cov_emd: float

    def to_text(self) -> str:
        names = [f.name for f in fields(self)]
        width = max(map(len, names))
        return "".join(f"{n:<{width}}  {getattr(self, n):8.2f}%\n" for n in names)

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "percent"])
        for f in fields(self):
            w.writerow([f.name, repr(getattr(self, f.name))])
        return buf.getvalue()


def evaluate(gen, ref, exact_emd_max: int = EXACT_EMD_MAX) -> MetricReport:
    """All six scores for a generated set against a reference set."""
    scores = {}
    for kind in ("cd", "emd"):
        t = dict(kind=kind, exact_emd_max=exact_emd_max)
        d_gr = pairwise_table(gen, ref, **t)
        nna = one_nna_from_tables(pairwise_table(gen, gen, symmetric=True, **t),
                                  pairwise_table(ref, ref, symmetric=True, **t), d_gr)
        scores[f"{kind}_1nna"] = nna
        scores[f"{kind}_1nna_abs50"] = one_nna_abs50(nna)
        scores[f"cov_{kind}"] = coverage_from_table(d_gr)
    return MetricReport(**scores)
