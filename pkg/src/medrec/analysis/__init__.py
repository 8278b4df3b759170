"""Interpretation pipeline: graph, embedding, clustering, themes, reports."""

from .clustering import ClusterError, ClusterModel, KMeansResult, bic_score, cluster, kmeans
from .cooccur import CooccurError, CooccurrenceMatrix, cooccurrence
from .graph import FuzzyGraph, GraphConfig, GraphError, build_graph, nearest_neighbors, pairwise_cosine_distances
from .hyperbolic import (
    EmbedError,
    HyperboloidEmbedding,
    PoincarePoints,
    embed,
    hyperbolic_distance_matrix,
    to_poincare,
)
from .report import AnalysisBundle, REPORT_FILES, ReportError, emit_report, run_analysis
from .themes import LinkageRow, TfidfMatrix, ThemeError, dendrogram, tfidf

__all__ = [
    "AnalysisBundle",
    "ClusterError",
    "ClusterModel",
    "CooccurError",
    "CooccurrenceMatrix",
    "EmbedError",
    "FuzzyGraph",
    "GraphConfig",
    "GraphError",
    "HyperboloidEmbedding",
    "KMeansResult",
    "LinkageRow",
    "PoincarePoints",
    "REPORT_FILES",
    "ReportError",
    "TfidfMatrix",
    "ThemeError",
    "bic_score",
    "build_graph",
    "cluster",
    "cooccurrence",
    "dendrogram",
    "embed",
    "emit_report",
    "hyperbolic_distance_matrix",
    "kmeans",
    "nearest_neighbors",
    "pairwise_cosine_distances",
    "run_analysis",
    "tfidf",
    "to_poincare",
]
