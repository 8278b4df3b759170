"""Fuzzy k-nearest-neighbor graph over medication-set vectors.

Distances are cosine distances (1 - cosine). Each point's outgoing edge
weights are exp(-max(0, d - rho)/s) with rho the nearest-neighbor distance
and s calibrated per point so the k weights sum to log2(k); directed edges
are then combined by fuzzy union.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..cohort import MedicationSet
from ..retrieval import cosine


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphConfig:
    k_neighbors: int = 15
    graph_epsilon: float = 1.0  # drop candidate edges at or beyond this distance

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise GraphError("k_neighbors must be >= 1")
        if self.graph_epsilon <= 0:
            raise GraphError("graph_epsilon must be > 0")


@dataclass(frozen=True)
class FuzzyGraph:
    n_points: int
    edges: tuple[tuple[int, int, float], ...]  # (i, j, weight), i < j
    config: GraphConfig


_SMOOTH_TOL = 1e-5
_SMOOTH_MAX_ITER = 64


def _calibrate_scale(dists: np.ndarray, rho: float, target: float) -> float:
    """Bisect s so sum(exp(-max(0, d - rho)/s)) hits the target."""

    def weight_sum(s: float) -> float:
        return float(np.exp(-np.maximum(0.0, dists - rho) / s).sum())

    lo, hi = 1e-12, 1.0
    while weight_sum(hi) < target and hi < 1e6:
        hi *= 2.0
    for _ in range(_SMOOTH_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if abs(weight_sum(mid) - target) < _SMOOTH_TOL:
            return mid
        if weight_sum(mid) > target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def pairwise_cosine_distances(vectors: list[MedicationSet]) -> np.ndarray:
    n = len(vectors)
    bits = np.stack([v.to_bits().astype(np.float64) for v in vectors])
    norms = np.sqrt((bits * bits).sum(axis=1))
    sim = bits @ bits.T
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = sim / np.outer(norms, norms)
    sim[~np.isfinite(sim)] = 0.0  # all-zero vectors have similarity 0
    d = 1.0 - sim
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def nearest_neighbors(dist_row: np.ndarray, self_index: int, k: int) -> list[int]:
    """k nearest points, ties broken by lower index."""
    order = sorted(
        (j for j in range(len(dist_row)) if j != self_index),
        key=lambda j: (dist_row[j], j),
    )
    return order[:k]


def build_graph(vectors: list[MedicationSet], config: GraphConfig | None = None) -> FuzzyGraph:
    config = config or GraphConfig()
    n = len(vectors)
    if n < 2:
        raise GraphError("need at least 2 vectors")
    d = pairwise_cosine_distances(vectors)
    k = min(config.k_neighbors, n - 1)
    target = math.log2(k) if k > 1 else 1.0

    directed: dict[tuple[int, int], float] = {}
    for i in range(n):
        nbrs = nearest_neighbors(d[i], i, k)
        kept = [j for j in nbrs if d[i, j] < config.graph_epsilon]
        if not kept:
            continue
        nd = d[i, np.array(nbrs)]
        rho = float(nd.min())
        s = _calibrate_scale(nd, rho, target)
        for j in kept:
            directed[(i, j)] = float(math.exp(-max(0.0, d[i, j] - rho) / s))

    merged: dict[tuple[int, int], float] = {}
    for (i, j), w in directed.items():
        key = (min(i, j), max(i, j))
        if key in merged:
            continue
        w_rev = directed.get((j, i), 0.0)
        merged[key] = w + w_rev - w * w_rev
    edges = tuple((i, j, merged[(i, j)]) for i, j in sorted(merged))
    return FuzzyGraph(n_points=n, edges=edges, config=config)
