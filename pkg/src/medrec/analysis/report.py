"""Analysis bundle assembly and deterministic report emission (CSV + SVG)."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

import numpy as np

from ..cohort import Cohort, MedicationSet
from .clustering import ClusterModel, cluster
from .cooccur import CooccurrenceMatrix, cooccurrence
from .graph import FuzzyGraph, GraphConfig, build_graph
from .hyperbolic import HyperboloidEmbedding, PoincarePoints, embed, to_poincare
from .themes import LinkageRow, TfidfMatrix, dendrogram, tfidf


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisBundle:
    event_ids: tuple[int, ...]
    poincare: PoincarePoints
    embedding: HyperboloidEmbedding
    clusters: ClusterModel
    tfidf_matrix: TfidfMatrix
    linkage: list[LinkageRow]
    cooccur: CooccurrenceMatrix
    med_labels: tuple[str, ...]
    proc_labels: tuple[str, ...]


def cluster_documents(cohort_records, med_sets, assignments, vocab) -> list[dict[str, int]]:
    """Term multiset per cluster: record codes plus the analyzed drug sets."""
    n_clusters = int(assignments.max()) + 1 if len(assignments) else 0
    docs: list[dict[str, int]] = [dict() for _ in range(n_clusters)]

    def bump(doc, term):
        doc[term] = doc.get(term, 0) + 1

    for record, meds, c in zip(cohort_records, med_sets, assignments):
        doc = docs[int(c)]
        for d in record.diagnoses:
            bump(doc, vocab.diagnoses[d])
        for p in record.procedures:
            bump(doc, vocab.procedures[p])
        for code, _flag in record.lab_events:
            bump(doc, vocab.lab_codes[code])
        for m in meds.indices:
            bump(doc, vocab.medications[m])
    return docs


def run_analysis(cohort: Cohort, med_sets: list[MedicationSet],
                 k_range: tuple[int, int] = (2, 12), seed: int = 0,
                 graph_config: GraphConfig | None = None,
                 iterations: int = 30) -> AnalysisBundle:
    """Full interpretation pipeline over one medication set per record."""
    if cohort.n_records != len(med_sets):
        raise ReportError(f"{cohort.n_records} records vs {len(med_sets)} medication sets")
    if cohort.n_records < max(2, k_range[1]):
        raise ReportError("cohort too small for the requested cluster range")

    graph = build_graph(med_sets, graph_config)
    embedding = embed(graph, iterations=iterations, seed=seed)
    disk = to_poincare(embedding)
    model = cluster(disk.uv, k_min=k_range[0], k_max=k_range[1], seed=seed)
    docs = cluster_documents(cohort.records, med_sets, model.assignments, cohort.vocabularies)
    matrix = tfidf(docs)
    linkage = dendrogram(matrix)
    co = cooccurrence(cohort.records, med_sets, cohort.vocabularies.n_procedures,
                      cohort.vocabularies.n_medications)
    return AnalysisBundle(
        event_ids=tuple(r.event_id for r in cohort.records),
        poincare=disk, embedding=embedding, clusters=model,
        tfidf_matrix=matrix, linkage=linkage, cooccur=co,
        med_labels=cohort.vocabularies.medications,
        proc_labels=cohort.vocabularies.procedures,
    )


REPORT_FILES = (
    "embedding.csv",
    "bic.csv",
    "tfidf_top_terms.csv",
    "linkage.csv",
    "cooccur_drug_drug.csv",
    "cooccur_drug_proc.csv",
    "poincare.svg",
    "dendrogram.svg",
    "cooccur_drug_drug.svg",
    "cooccur_drug_proc.svg",
)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fresh_figure():
    plt.rcParams["svg.hashsalt"] = "medrec"
    return plt.figure(figsize=(6, 6))


def _save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _leaf_order(linkage: list[LinkageRow], n_terms: int) -> list[int]:
    children: dict[int, tuple[int, int]] = {}
    for i, row in enumerate(linkage):
        children[n_terms + i] = (row.left, row.right)

    def leaves(node: int) -> list[int]:
        if node < n_terms:
            return [node]
        l, r = children[node]
        return leaves(l) + leaves(r)

    return leaves(n_terms + len(linkage) - 1) if linkage else list(range(n_terms))


def _draw_dendrogram(ax, linkage: list[LinkageRow], labels) -> None:
    n = len(labels)
    order = _leaf_order(linkage, n)
    xpos = {leaf: float(i) for i, leaf in enumerate(order)}
    height = {i: 0.0 for i in range(n)}
    for i, row in enumerate(linkage):
        xl, xr = xpos[row.left], xpos[row.right]
        hl, hr = height[row.left], height[row.right]
        h = row.height
        ax.plot([xl, xl, xr, xr], [hl, h, h, hr], color="k", lw=0.8)
        xpos[n + i] = 0.5 * (xl + xr)
        height[n + i] = h
    ax.set_xticks(range(n))
    ax.set_xticklabels([labels[i] for i in order], rotation=90, fontsize=5)
    ax.set_ylabel("complete-linkage height")


def emit_report(bundle: AnalysisBundle, out_dir) -> list[str]:
    """Write CSVs and SVG plots; byte-deterministic for identical bundles."""
    if bundle is None or len(bundle.event_ids) == 0:
        raise ReportError("empty analysis bundle")
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in REPORT_FILES}

    uv = bundle.poincare.uv
    _write_csv(
        paths["embedding.csv"],
        ["event_id", "u", "v", "cluster"],
        [
            [eid, repr(float(uv[i, 0])), repr(float(uv[i, 1])), int(bundle.clusters.assignments[i])]
            for i, eid in enumerate(bundle.event_ids)
        ],
    )
    _write_csv(
        paths["bic.csv"],
        ["k", "bic"],
        [[k, repr(float(v))] for k, v in sorted(bundle.clusters.bic_curve.items())],
    )
    top_rows = []
    n_docs = bundle.tfidf_matrix.scores.shape[0]
    for c in range(n_docs):
        for rank, (term, score) in enumerate(bundle.tfidf_matrix.top_terms(c, limit=10), start=1):
            top_rows.append([c, rank, term, repr(score)])
    _write_csv(paths["tfidf_top_terms.csv"], ["cluster", "rank", "term", "score"], top_rows)
    _write_csv(
        paths["linkage.csv"],
        ["left", "right", "height", "size"],
        [[r.left, r.right, repr(r.height), r.size] for r in bundle.linkage],
    )
    _write_csv(
        paths["cooccur_drug_drug.csv"],
        ["med_a", "med_b", "count"],
        [
            [a, b, int(bundle.cooccur.drug_drug[a, b])]
            for a in range(bundle.cooccur.drug_drug.shape[0])
            for b in range(a + 1, bundle.cooccur.drug_drug.shape[1])
            if bundle.cooccur.drug_drug[a, b] > 0
        ],
    )
    _write_csv(
        paths["cooccur_drug_proc.csv"],
        ["procedure", "medication", "count"],
        [
            [p, m, int(bundle.cooccur.drug_proc[p, m])]
            for p in range(bundle.cooccur.drug_proc.shape[0])
            for m in range(bundle.cooccur.drug_proc.shape[1])
            if bundle.cooccur.drug_proc[p, m] > 0
        ],
    )

    fig = _fresh_figure()
    ax = fig.add_subplot(111)
    theta = np.linspace(0, 2 * np.pi, 256)
    ax.plot(np.cos(theta), np.sin(theta), color="k", lw=0.8)
    ax.scatter(uv[:, 0], uv[:, 1], c=bundle.clusters.assignments, cmap="tab10", s=8)
    ax.set_aspect("equal")
    ax.set_title(f"disk embedding, k={bundle.clusters.chosen_k}")
    _save_svg(fig, paths["poincare.svg"])

    fig = _fresh_figure()
    _draw_dendrogram(fig.add_subplot(111), bundle.linkage, bundle.tfidf_matrix.terms)
    _save_svg(fig, paths["dendrogram.svg"])

    for name, matrix, xlabel, ylabel in (
        ("cooccur_drug_drug.svg", bundle.cooccur.drug_drug, "medication", "medication"),
        ("cooccur_drug_proc.svg", bundle.cooccur.drug_proc, "medication", "procedure"),
    ):
        fig = _fresh_figure()
        ax = fig.add_subplot(111)
        im = ax.imshow(matrix, cmap="viridis", aspect="auto")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        _save_svg(fig, paths[name])

    return [paths[name] for name in REPORT_FILES]
