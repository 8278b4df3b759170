"""Counterfactual retrieval over historical hospitalizations.

Candidates must share the query's exact procedure multiset and fall inside an
age window; the pool is then refined to the top-k medication sets by cosine
similarity above a threshold. The mean length of stay of the survivors is the
counterfactual outcome (ELOS) for the queried medication set, and per-sample
reward is recorded stay minus ELOS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cohort import Cohort, HospitalizationRecord, MedicationSet

SELF_FALLBACK = "self_fallback"
ZERO_REWARD = "zero_reward"


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 50
    phi: float = 0.0  # cosine threshold; strictly-greater filter
    age_window: int = 5
    empty_pool_policy: str = SELF_FALLBACK
    elos_reducer: str = "mean"  # "mean" per the defining formula; "min" variant exposed

    def __post_init__(self):
        if self.k < 1:
            raise RetrievalError("k must be >= 1")
        if not (-1.0 <= self.phi <= 1.0):
            raise RetrievalError("phi must be in [-1, 1]")
        if self.age_window < 0:
            raise RetrievalError("age_window must be >= 0")
        if self.empty_pool_policy not in (SELF_FALLBACK, ZERO_REWARD):
            raise RetrievalError(f"unknown empty_pool_policy '{self.empty_pool_policy}'")
        if self.elos_reducer not in ("mean", "min"):
            raise RetrievalError(f"unknown elos_reducer '{self.elos_reducer}'")


@dataclass(frozen=True)
class IndexEntry:
    event_id: int
    age: int
    medications: MedicationSet
    los: float


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable procedure-multiset-keyed view over a cohort split."""

    split_tag: str
    n_medications: int
    buckets: dict[tuple[int, ...], tuple[IndexEntry, ...]]

    @property
    def n_entries(self) -> int:
        return sum(len(v) for v in self.buckets.values())


@dataclass(frozen=True)
class Neighbor:
    event_id: int
    similarity: float
    los: float


@dataclass(frozen=True)
class RetrievedSet:
    neighbors: tuple[Neighbor, ...]
    elos: float
    excluded: bool = False


@dataclass(frozen=True)
class BatchReward:
    rewards: tuple  # float per included sample, None per excluded
    elos_values: tuple
    h_b: float
    sum_elos: float
    n_included: int
    mean_los: float
    mean_elos: float

    @property
    def all_excluded(self) -> bool:
        return self.n_included == 0


def build_index(cohort: Cohort, split_tag: str) -> RetrievalIndex:
    if cohort.n_records == 0:
        raise RetrievalError("cannot index an empty cohort")
    buckets: dict[tuple[int, ...], list[IndexEntry]] = {}
    for r in cohort.records:
        buckets.setdefault(r.procedures, []).append(
            IndexEntry(event_id=r.event_id, age=r.demographics.age,
                       medications=r.medications, los=r.los)
        )
    return RetrievalIndex(
        split_tag=split_tag,
        n_medications=cohort.vocabularies.n_medications,
        buckets={k: tuple(v) for k, v in buckets.items()},
    )


def retrieval_p(index: RetrievalIndex, procedures: tuple[int, ...], age: int,
                config: RetrievalConfig, exclude_event_id: int | None = None) -> list[IndexEntry]:
    """Constraint stage: exact procedure multiset, age within the window."""
    key = tuple(sorted(procedures))
    pool = []
    for e in index.buckets.get(key, ()):
        if exclude_event_id is not None and e.event_id == exclude_event_id:
            continue
        if abs(e.age - age) <= config.age_window:
            pool.append(e)
    return pool


def cosine(a: MedicationSet, b: MedicationSet) -> float:
    """Cosine similarity of two binary medication vectors; 0 if either empty."""
    if a.n != b.n:
        raise RetrievalError(f"medication vector lengths differ: {a.n} vs {b.n}")
    if len(a) == 0 or len(b) == 0:
        return 0.0
    inter = len(set(a.indices) & set(b.indices))
    return inter / math.sqrt(len(a) * len(b))


def retrieval_d(pool, alpha: MedicationSet, config: RetrievalConfig,
                self_event: HospitalizationRecord | None = None) -> RetrievedSet:
    """Refinement stage: top-k by cosine above phi, ties to lower event_id."""
    scored = [(cosine(alpha, e.medications), e) for e in pool]
    kept = [(s, e) for s, e in scored if s > config.phi]
    kept.sort(key=lambda se: (-se[0], se[1].event_id))
    kept = kept[: config.k]

    if not kept:
        if config.empty_pool_policy == SELF_FALLBACK:
            if self_event is None:
                raise RetrievalError("self_fallback policy requires the query's own record")
            nb = (Neighbor(event_id=self_event.event_id, similarity=1.0, los=self_event.los),)
            return RetrievedSet(neighbors=nb, elos=self_event.los)
        return RetrievedSet(neighbors=(), elos=0.0, excluded=True)

    neighbors = tuple(Neighbor(event_id=e.event_id, similarity=s, los=e.los) for s, e in kept)
    los_values = [n.los for n in neighbors]
    elos = min(los_values) if config.elos_reducer == "min" else sum(los_values) / len(los_values)
    return RetrievedSet(neighbors=neighbors, elos=elos)


def retrieve_for_record(index: RetrievalIndex, record: HospitalizationRecord,
                        alpha: MedicationSet, config: RetrievalConfig) -> RetrievedSet:
    pool = retrieval_p(index, record.procedures, record.demographics.age, config,
                       exclude_event_id=record.event_id)
    return retrieval_d(pool, alpha, config, self_event=record)


def batch_reward(records, alphas, index: RetrievalIndex, config: RetrievalConfig) -> BatchReward:
    """Per-sample reward = recorded stay minus counterfactual ELOS."""
    if len(records) != len(alphas):
        raise RetrievalError(f"{len(records)} records vs {len(alphas)} medication sets")
    rewards: list = []
    elos_values: list = []
    included_r: list[float] = []
    included_e: list[float] = []
    included_los: list[float] = []
    for record, alpha in zip(records, alphas):
        rs = retrieve_for_record(index, record, alpha, config)
        if rs.excluded:
            rewards.append(None)
            elos_values.append(None)
            continue
        r = record.los - rs.elos
        rewards.append(r)
        elos_values.append(rs.elos)
        included_r.append(r)
        included_e.append(rs.elos)
        included_los.append(record.los)
    n_inc = len(included_r)
    return BatchReward(
        rewards=tuple(rewards),
        elos_values=tuple(elos_values),
        h_b=(sum(included_r) / n_inc) if n_inc else 0.0,
        sum_elos=sum(included_e) if n_inc else 0.0,
        n_included=n_inc,
        mean_los=(sum(included_los) / n_inc) if n_inc else 0.0,
        mean_elos=(sum(included_e) / n_inc) if n_inc else 0.0,
    )


def query_counterfactual(index: RetrievalIndex, procedures, age: int, alpha: MedicationSet,
                         config: RetrievalConfig, recorded_los: float | None = None,
                         exclude_event_id: int | None = None) -> dict:
    """One-shot what-if query; wire-format dict (stable key order)."""
    pool = retrieval_p(index, tuple(procedures), age, config, exclude_event_id=exclude_event_id)
    rs = retrieval_d(pool, alpha, RetrievalConfig(
        k=config.k, phi=config.phi, age_window=config.age_window,
        empty_pool_policy=ZERO_REWARD, elos_reducer=config.elos_reducer,
    ))
    out = {
        "elos": rs.elos if not rs.excluded else None,
        "reward": (recorded_los - rs.elos) if (recorded_los is not None and not rs.excluded) else None,
        "neighbors": [
            {"event_id": n.event_id, "similarity": n.similarity, "los": n.los}
            for n in rs.neighbors
        ],
        "excluded": rs.excluded,
    }
    return out
