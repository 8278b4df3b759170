"""Hyperboloid-sheet layout of a fuzzy graph, with disk projection.

Points live on z = sqrt(1 + x^2 + y^2); only (x, y) are free parameters, so
every iterate stays on the sheet by construction. The objective is the fuzzy
cross entropy between graph weights and q = 1/(1 + d_H^2) under the
hyperbolic distance d_H = arccosh(z_i z_j - x_i x_j - y_i y_j), minimized by
per-edge stochastic updates with uniform negative sampling. Snapshots are
scored on a fixed evaluation objective and the best one is returned, so the
final objective never exceeds the initial one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import FuzzyGraph


class EmbedError(RuntimeError):
    pass


N_NEGATIVE = 5
GRAD_CLIP = 4.0
_MIN_LORENTZ = 1.0 + 1e-12
_EPS_D = 1e-9


@dataclass(frozen=True)
class HyperboloidEmbedding:
    xy: np.ndarray  # (n, 2)
    objective: float
    initial_objective: float

    @property
    def z(self) -> np.ndarray:
        return np.sqrt(1.0 + (self.xy**2).sum(axis=1))

    def points(self) -> np.ndarray:
        """(n, 3) rows (x, y, z)."""
        return np.column_stack([self.xy, self.z])


@dataclass(frozen=True)
class PoincarePoints:
    uv: np.ndarray  # (n, 2), strictly inside the unit disk


def _z_of(xy: np.ndarray) -> np.ndarray:
    return np.sqrt(1.0 + (xy**2).sum(axis=1))


def _distance(xy: np.ndarray, z: np.ndarray, i: int, j: int) -> tuple[float, float]:
    """(d_H, lorentz product), clamped into the arccosh domain."""
    u = z[i] * z[j] - xy[i, 0] * xy[j, 0] - xy[i, 1] * xy[j, 1]
    u = max(u, _MIN_LORENTZ)
    return float(np.arccosh(u)), float(u)


def _pair_grad(xy: np.ndarray, z: np.ndarray, i: int, j: int, dl_dd: float) -> np.ndarray:
    """Gradient of a loss term w.r.t. (x_i, y_i) given dL/dd at this pair."""
    d, u = _distance(xy, z, i, j)
    dd_du = 1.0 / np.sqrt(max(u * u - 1.0, 1e-24))
    du_dxi = (xy[i, 0] / z[i]) * z[j] - xy[j, 0]
    du_dyi = (xy[i, 1] / z[i]) * z[j] - xy[j, 1]
    g = dl_dd * dd_du * np.array([du_dxi, du_dyi])
    return np.clip(g, -GRAD_CLIP, GRAD_CLIP)


def _ce_eval(xy: np.ndarray, edges, neg_pairs) -> float:
    """Deterministic objective: positive edges plus a fixed negative set."""
    z = _z_of(xy)
    total = 0.0
    for i, j, w in edges:
        d, _ = _distance(xy, z, i, j)
        q = 1.0 / (1.0 + d * d)
        total += -w * np.log(max(q, 1e-12))
    for i, j in neg_pairs:
        d, _ = _distance(xy, z, i, j)
        q = 1.0 / (1.0 + d * d)
        total += -np.log(max(1.0 - q, 1e-12))
    if not np.isfinite(total):
        raise EmbedError(f"non-finite embedding objective: {total}")
    return float(total)


def embed(graph: FuzzyGraph, iterations: int = 30, seed: int = 0) -> HyperboloidEmbedding:
    """Layout by per-edge SGD with linearly decaying step size."""
    n = graph.n_points
    rng = np.random.default_rng(seed)
    xy = rng.normal(0.0, 0.01, size=(n, 2))
    edges = list(graph.edges)
    edge_set = {(i, j) for i, j, _ in edges}

    def is_negative(i: int, m: int) -> bool:
        return m != i and (min(i, m), max(i, m)) not in edge_set

    # fixed negative pairs for snapshot scoring only
    eval_rng = np.random.default_rng(seed + 1)
    neg_pairs = []
    for i, j, _ in edges:
        for _ in range(N_NEGATIVE):
            m = int(eval_rng.integers(0, n))
            if is_negative(i, m):
                neg_pairs.append((i, m))

    best_xy = xy.copy()
    best_ce = _ce_eval(xy, edges, neg_pairs)
    ce0 = best_ce

    if not edges:
        return HyperboloidEmbedding(xy=best_xy, objective=best_ce, initial_objective=ce0)

    for it in range(iterations):
        lr = 1.0 * (1.0 - it / iterations)
        order = rng.permutation(len(edges))
        z = _z_of(xy)
        for e in order:
            i, j, w = edges[e]
            # attractive term: dL/dd for -w ln q = w * 2d/(1+d^2)
            d, _ = _distance(xy, z, i, j)
            dl_dd = w * 2.0 * d / (1.0 + d * d)
            gi = _pair_grad(xy, z, i, j, dl_dd)
            gj = _pair_grad(xy, z, j, i, dl_dd)
            xy[i] -= lr * gi
            xy[j] -= lr * gj
            z[i] = np.sqrt(1.0 + xy[i] @ xy[i])
            z[j] = np.sqrt(1.0 + xy[j] @ xy[j])
            # repulsive terms: dL/dd for -ln(1-q) = 2d/(1+d^2) - 2/d
            for _ in range(N_NEGATIVE):
                m = int(rng.integers(0, n))
                if not is_negative(i, m):
                    continue
                d, _ = _distance(xy, z, i, m)
                d = max(d, _EPS_D)
                dl_dd = 2.0 * d / (1.0 + d * d) - 2.0 / d
                gi = _pair_grad(xy, z, i, m, dl_dd)
                xy[i] -= lr * gi
                z[i] = np.sqrt(1.0 + xy[i] @ xy[i])
        ce = _ce_eval(xy, edges, neg_pairs)
        if ce < best_ce:
            best_ce = ce
            best_xy = xy.copy()

    return HyperboloidEmbedding(xy=best_xy, objective=best_ce, initial_objective=ce0)


def to_poincare(embedding: HyperboloidEmbedding) -> PoincarePoints:
    """Stereographic projection (x, y) / (1 + z); lands strictly inside the disk."""
    z = embedding.z
    uv = embedding.xy / (1.0 + z)[:, None]
    return PoincarePoints(uv=uv)


def hyperbolic_distance_matrix(embedding: HyperboloidEmbedding) -> np.ndarray:
    pts = embedding.points()
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    u = np.outer(z, z) - np.outer(x, x) - np.outer(y, y)
    return np.arccosh(np.maximum(u, _MIN_LORENTZ))
