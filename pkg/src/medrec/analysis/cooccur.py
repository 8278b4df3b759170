"""Co-occurrence counting over hospitalizations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cohort import MedicationSet


class CooccurError(ValueError):
    pass


@dataclass(frozen=True)
class CooccurrenceMatrix:
    drug_drug: np.ndarray   # (n_meds, n_meds), symmetric, zero diagonal
    drug_proc: np.ndarray   # (n_procs, n_meds)


def cooccurrence(records, med_sets: list[MedicationSet], n_procedures: int,
                 n_medications: int) -> CooccurrenceMatrix:
    """Each stay increments every (procedure, drug) pair present and every
    unordered drug pair present."""
    if len(records) != len(med_sets):
        raise CooccurError(f"{len(records)} records vs {len(med_sets)} medication sets")
    dd = np.zeros((n_medications, n_medications), dtype=np.int64)
    dp = np.zeros((n_procedures, n_medications), dtype=np.int64)
    for record, meds in zip(records, med_sets):
        idx = meds.indices
        for p in set(record.procedures):
            for m in idx:
                dp[p, m] += 1
        for a_i in range(len(idx)):
            for b_i in range(a_i + 1, len(idx)):
                a, b = idx[a_i], idx[b_i]
                dd[a, b] += 1
                dd[b, a] += 1
    return CooccurrenceMatrix(drug_drug=dd, drug_proc=dp)
