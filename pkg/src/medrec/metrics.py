"""Evaluation metrics: micro AUCs, set overlap, DDI rate, counterfactual
ELOS of predicted medication sets, and a paired t-test."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .cohort import Cohort, MedicationSet
from .predictor import ModelParams, encode_batch, forward, predict_sets, targets_matrix
from .retrieval import ZERO_REWARD, RetrievalConfig, RetrievalIndex, batch_reward


class MetricError(ValueError):
    pass


class UndefinedMetricError(MetricError):
    """Metric has no defined value on this input (e.g. single-class AUC)."""


class DegenerateTestError(MetricError):
    """Test statistic undefined (zero-variance differences)."""


# --- ranking --------------------------------------------------------------------

def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties averaged."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_metrics(scores, labels, average: str = "micro") -> tuple[float, float]:
    """Micro ROC-AUC (rank form, ties 0.5) and PR-AUC (average precision)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if s.shape != y.shape:
        raise MetricError(f"scores {s.shape} vs labels {y.shape}")
    if average == "macro":
        s2 = np.asarray(scores, dtype=np.float64)
        y2 = np.asarray(labels, dtype=np.float64)
        if s2.ndim != 2:
            raise MetricError("macro averaging needs 2-d inputs")
        cols = [c for c in range(s2.shape[1]) if 0 < y2[:, c].sum() < s2.shape[0]]
        if not cols:
            raise UndefinedMetricError("no label column has both classes")
        pairs = [rank_metrics(s2[:, c], y2[:, c]) for c in cols]
        return (float(np.mean([p[0] for p in pairs])), float(np.mean([p[1] for p in pairs])))
    if average != "micro":
        raise MetricError(f"unknown averaging '{average}'")

    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise MetricError("labels must be binary")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")

    ranks = _average_ranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    roc_auc = u / (n_pos * n_neg)

    # average precision over distinct descending thresholds
    order = np.argsort(-s, kind="mergesort")
    ss, yy = s[order], y[order]
    tp = 0
    fp = 0
    ap = 0.0
    prev_recall = 0.0
    i = 0
    while i < len(ss):
        j = i
        while j + 1 < len(ss) and ss[j + 1] == ss[i]:
            j += 1
        tp += int(yy[i : j + 1].sum())
        fp += (j - i + 1) - int(yy[i : j + 1].sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(roc_auc), float(ap)


# --- sets -----------------------------------------------------------------------

def set_metrics(pred_sets, true_sets) -> tuple[float, float, float, float]:
    """Sample-averaged Jaccard/precision/recall; F1 from the averaged P and R.

    Conventions: empty-vs-empty counts as Jaccard 1; empty denominators give 0.
    """
    if len(pred_sets) != len(true_sets):
        raise MetricError(f"{len(pred_sets)} predictions vs {len(true_sets)} truths")
    if not pred_sets:
        raise MetricError("no samples")
    jac, prec, rec = [], [], []
    for p, t in zip(pred_sets, true_sets):
        ps, ts = set(p.indices), set(t.indices)
        inter = len(ps & ts)
        union = len(ps | ts)
        jac.append(inter / union if union else 1.0)
        prec.append(inter / len(ps) if ps else 0.0)
        rec.append(inter / len(ts) if ts else 0.0)
    mp, mr = float(np.mean(prec)), float(np.mean(rec))
    f1 = (2 * mp * mr / (mp + mr)) if (mp + mr) > 0 else 0.0
    return float(np.mean(jac)), mp, mr, f1


def ddi_rate(pred_sets, ddi_pairs) -> float:
    """Mean per-sample fraction of predicted medication pairs found in the
    interaction table; samples with fewer than two drugs contribute 0."""
    if not pred_sets:
        raise MetricError("no samples")
    table = {(min(a, b), max(a, b)) for a, b in ddi_pairs}
    rates = []
    for p in pred_sets:
        idx = p.indices
        n = len(idx)
        if n < 2:
            rates.append(0.0)
            continue
        total = n * (n - 1) // 2
        hits = sum(
            1
            for i in range(n)
            for j in range(i + 1, n)
            if (idx[i], idx[j]) in table
        )
        rates.append(hits / total)
    return float(np.mean(rates))


# --- paired t-test ----------------------------------------------------------------

_BETA_EPS = 3e-16
_BETA_FPMIN = 1e-300
_BETA_MAXIT = 300


def _betacf(a: float, b: float, x: float) -> float:
    # Lentz's continued fraction for the regularized incomplete beta
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_FPMIN:
        d = _BETA_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise MetricError("incomplete beta continued fraction did not converge")


def incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized I_x(a, b)."""
    if not (0.0 <= x <= 1.0):
        raise MetricError(f"x={x} outside [0,1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_bt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
             + a * math.log(x) + b * math.log(1.0 - x))
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def paired_t_test(a, b) -> tuple[float, float, int]:
    """Two-sided paired t-test; p from the Student-t CDF via incomplete beta."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("paired samples must be equal-length 1-d arrays")
    n = len(a)
    if n < 2:
        raise MetricError("need at least 2 pairs")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateTestError("zero variance of paired differences")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    nu = n - 1
    p = incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t)) if t != 0.0 else 1.0
    return t, p, n


# --- full evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    elos: float
    roc_auc: float
    pr_auc: float
    jaccard: float
    precision: float
    recall: float
    f1: float
    ddi_rate: float
    n_samples: int
    n_elos_included: int

    def to_flat_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @staticmethod
    def csv_header() -> list[str]:
        return [f.name for f in fields(EvalReport)]

    def csv_row(self) -> list:
        row = []
        for f in fields(self):
            v = getattr(self, f.name)
            row.append(repr(v) if isinstance(v, float) else v)
        return row


def write_reports_csv(reports: "list[tuple[int, EvalReport]]", path) -> None:
    """One row per seed for cross-seed aggregation."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed"] + EvalReport.csv_header())
        for seed, r in reports:
            w.writerow([seed] + r.csv_row())


def evaluate_probabilities(probs: np.ndarray, cohort: Cohort, index: RetrievalIndex,
                           retr_cfg: RetrievalConfig | None = None,
                           threshold: float = 0.5) -> tuple[EvalReport, list[MedicationSet]]:
    """Score per-label probabilities against a cohort's recorded sets."""
    if cohort.n_records == 0:
        raise MetricError("empty evaluation cohort")
    n_meds = cohort.vocabularies.n_medications
    if probs.shape != (cohort.n_records, n_meds):
        raise MetricError(f"probability matrix {probs.shape} does not match cohort")
    retr_cfg = retr_cfg or RetrievalConfig()
    eval_cfg = RetrievalConfig(k=retr_cfg.k, phi=retr_cfg.phi, age_window=retr_cfg.age_window,
                               empty_pool_policy=ZERO_REWARD, elos_reducer=retr_cfg.elos_reducer)

    preds = predict_sets(probs, n_meds, threshold)
    trues = [r.medications for r in cohort.records]
    targets = targets_matrix(cohort.records, n_meds)

    roc, pr = rank_metrics(probs, targets)
    jac, prec, rec, f1 = set_metrics(preds, trues)
    ddi = ddi_rate(preds, cohort.ddi_pairs)
    br = batch_reward(list(cohort.records), preds, index, eval_cfg)
    report = EvalReport(
        elos=br.mean_elos, roc_auc=roc, pr_auc=pr, jaccard=jac,
        precision=prec, recall=rec, f1=f1, ddi_rate=ddi,
        n_samples=cohort.n_records, n_elos_included=br.n_included,
    )
    return report, preds


def evaluate(params: ModelParams, cohort: Cohort, index: RetrievalIndex,
             retr_cfg: RetrievalConfig | None = None) -> EvalReport:
    """Run the model over a cohort and score predictions against records."""
    if cohort.n_records == 0:
        raise MetricError("empty evaluation cohort")
    if params.n_medications != cohort.vocabularies.n_medications:
        raise MetricError("model and cohort medication vocabularies differ")
    batch = encode_batch(cohort.records, cohort.vocabularies)
    probs = forward(params, batch).value
    report, _ = evaluate_probabilities(probs, cohort, index, retr_cfg,
                                       params.config.threshold)
    return report


def write_predictions(records, pred_sets, path) -> None:
    """Line-delimited predicted medication sets keyed by event."""
    import json

    with open(path, "w", encoding="utf-8") as f:
        for r, p in zip(records, pred_sets):
            f.write(json.dumps({"event_id": r.event_id, "medications": list(p.indices)},
                               separators=(",", ":")) + "\n")


def read_predictions(path, n_medications: int) -> dict[int, MedicationSet]:
    import json

    out: dict[int, MedicationSet] = {}
    with open(path, "r", encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[int(obj["event_id"])] = MedicationSet(
                    n=n_medications, indices=tuple(int(m) for m in obj["medications"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise MetricError(f"bad prediction on line {i}: {e}") from e
    return out
