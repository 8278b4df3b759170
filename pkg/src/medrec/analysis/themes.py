"""Cluster theme extraction: TF-IDF scoring of codes per cluster and a
complete-linkage dendrogram over term score profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ThemeError(ValueError):
    pass


@dataclass(frozen=True)
class TfidfMatrix:
    terms: tuple[str, ...]
    scores: np.ndarray  # (n_documents, n_terms)

    def top_terms(self, doc: int, limit: int = 10) -> list[tuple[str, float]]:
        row = self.scores[doc]
        order = sorted(range(len(self.terms)), key=lambda t: (-row[t], self.terms[t]))
        return [(self.terms[t], float(row[t])) for t in order[:limit] if row[t] > 0]


def tfidf(documents: list[dict[str, int]]) -> TfidfMatrix:
    """score(t, d) = (f_td / max_t' f_t'd) * (log10(|D| / (df_t + 1)) + 1)."""
    if not documents:
        raise ThemeError("need at least one document")
    terms = sorted({t for doc in documents for t in doc})
    n_docs = len(documents)
    df = {t: sum(1 for doc in documents if t in doc) for t in terms}
    scores = np.zeros((n_docs, len(terms)))
    for d, doc in enumerate(documents):
        if not doc:
            continue  # empty document keeps an all-zero row
        peak = max(doc.values())
        for ti, t in enumerate(terms):
            f = doc.get(t, 0)
            if f == 0:
                continue
            scores[d, ti] = (f / peak) * (math.log10(n_docs / (df[t] + 1)) + 1.0)
    return TfidfMatrix(terms=tuple(terms), scores=scores)


@dataclass(frozen=True)
class LinkageRow:
    left: int
    right: int
    height: float
    size: int


def dendrogram(matrix: TfidfMatrix) -> list[LinkageRow]:
    """Complete-linkage agglomeration over term columns.

    Cluster ids: 0..n-1 are terms, n+i is the cluster made by merge i. Ties
    on height resolve to the lexicographically smaller (left, right) pair.
    """
    vectors = matrix.scores.T  # term profiles across documents
    n = len(vectors)
    if n < 2:
        raise ThemeError("need at least 2 terms")

    # active cluster id -> index into dist bookkeeping
    dist: dict[tuple[int, int], float] = {}
    active: list[int] = list(range(n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(np.linalg.norm(vectors[i] - vectors[j]))
    sizes = {i: 1 for i in range(n)}

    rows: list[LinkageRow] = []
    next_id = n
    while len(active) > 1:
        best_pair = None
        best_d = math.inf
        for ai in range(len(active)):
            for bj in range(ai + 1, len(active)):
                a, b = active[ai], active[bj]
                d = dist[(min(a, b), max(a, b))]
                if d < best_d or (d == best_d and (a, b) < best_pair):
                    best_d = d
                    best_pair = (a, b)
        a, b = best_pair
        rows.append(LinkageRow(left=a, right=b, height=best_d, size=sizes[a] + sizes[b]))
        # Lance-Williams update for complete linkage: new distance is the max
        active.remove(a)
        active.remove(b)
        for c in active:
            da = dist.pop((min(a, c), max(a, c)))
            db = dist.pop((min(b, c), max(b, c)))
            dist[(min(next_id, c), max(next_id, c))] = max(da, db)
        dist.pop((a, b), None)
        sizes[next_id] = sizes[a] + sizes[b]
        active.append(next_id)
        next_id += 1
    return rows
