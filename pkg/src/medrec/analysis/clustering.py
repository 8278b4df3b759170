"""K-means with k-means++ seeding and BIC-based selection of the cluster
count, run on disk coordinates with Euclidean distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ClusterError(ValueError):
    pass


N_RESTARTS = 50
LLOYD_TOL = 1e-6
LLOYD_MAX_ITER = 200
_MIN_VARIANCE = 1e-12


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    chosen_k: int
    bic_curve: dict[int, float]


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _inertia(points: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    return float(((points - centroids[assign]) ** 2).sum())


def _plus_plus_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[int(rng.integers(0, n))]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[c] = points[int(rng.integers(0, n))]
        else:
            probs = d2 / total
            centroids[c] = points[int(rng.choice(n, p=probs))]
        d2 = np.minimum(d2, ((points - centroids[c]) ** 2).sum(axis=1))
    return centroids


def kmeans(points: np.ndarray, k: int, seed: int, n_restarts: int = N_RESTARTS) -> KMeansResult:
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k < 1 or k > n:
        raise ClusterError(f"k={k} out of range for {n} points")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    for _ in range(n_restarts):
        centroids = _plus_plus_seed(points, k, rng)
        for _ in range(LLOYD_MAX_ITER):
            assign = _assign(points, centroids)
            new_centroids = centroids.copy()
            for c in range(k):
                members = points[assign == c]
                if len(members) == 0:
                    # reseed an empty cluster at the farthest point
                    far = int(((points - centroids[assign]) ** 2).sum(axis=1).argmax())
                    new_centroids[c] = points[far]
                else:
                    new_centroids[c] = members.mean(axis=0)
            move = float(np.abs(new_centroids - centroids).max())
            centroids = new_centroids
            if move < LLOYD_TOL:
                break
        assign = _assign(points, centroids)
        result = KMeansResult(centroids=centroids, assignments=assign,
                              inertia=_inertia(points, centroids, assign))
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def bic_score(points: np.ndarray, result: KMeansResult) -> float:
    """Spherical-Gaussian BIC; lower is better."""
    n, d = points.shape
    k = len(result.centroids)
    if n <= k:
        return math.inf
    sigma2 = max(result.inertia / (d * (n - k)), _MIN_VARIANCE)
    counts = np.bincount(result.assignments, minlength=k).astype(np.float64)
    mixing = float((counts[counts > 0] * np.log(counts[counts > 0] / n)).sum())
    ll = mixing - 0.5 * n * d * math.log(2.0 * math.pi * sigma2) - 0.5 * d * (n - k)
    n_free = k * (d + 1)
    return -2.0 * ll + n_free * math.log(n)


def cluster(points: np.ndarray, k_min: int = 2, k_max: int = 12, seed: int = 0) -> ClusterModel:
    """Scan k in [k_min, k_max], pick the BIC minimum (ties to smaller k)."""
    points = np.asarray(points, dtype=np.float64)
    if k_min < 1 or k_min > k_max:
        raise ClusterError(f"bad k range [{k_min}, {k_max}]")
    if k_max > len(points):
        raise ClusterError(f"k_max={k_max} exceeds {len(points)} points")
    curve: dict[int, float] = {}
    fits: dict[int, KMeansResult] = {}
    for k in range(k_min, k_max + 1):
        fit = kmeans(points, k, seed=seed + k)
        fits[k] = fit
        curve[k] = bic_score(points, fit)
    chosen = min(curve, key=lambda k: (curve[k], k))
    best = fits[chosen]
    return ClusterModel(centroids=best.centroids, assignments=best.assignments,
                        chosen_k=chosen, bic_curve=curve)
