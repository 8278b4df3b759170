"""Synthetic ICU cohort model.

Domain types (vocabularies, hospitalization records, medication sets), a
generator that plants a recoverable medication->length-of-stay signal,
patient-wise splitting, and line-delimited persistence.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

FORMAT_VERSION = 1
GENDERS = ("F", "M")
MIN_AGE = 18
MAX_AGE = 90


class CohortError(ValueError):
    """Domain-level problem with a cohort or a generator config."""


class CohortParseError(CohortError):
    """Malformed cohort file; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CohortSchemaError(CohortError):
    """Structurally valid file whose content violates the cohort schema."""


@dataclass(frozen=True)
class Vocabularies:
    """Code label arrays; index positions are the code identities."""

    diagnoses: tuple[str, ...]
    procedures: tuple[str, ...]
    medications: tuple[str, ...]
    lab_codes: tuple[str, ...]
    ethnicities: tuple[str, ...]

    def __post_init__(self):
        for name in ("diagnoses", "procedures", "medications", "lab_codes", "ethnicities"):
            labels = getattr(self, name)
            if len(labels) < 1:
                raise CohortError(f"vocabulary '{name}' must have at least one code")
            if len(set(labels)) != len(labels):
                raise CohortError(f"vocabulary '{name}' has duplicate labels")

    @property
    def n_diagnoses(self) -> int:
        return len(self.diagnoses)

    @property
    def n_procedures(self) -> int:
        return len(self.procedures)

    @property
    def n_medications(self) -> int:
        return len(self.medications)

    @property
    def n_lab_codes(self) -> int:
        return len(self.lab_codes)

    @property
    def n_ethnicities(self) -> int:
        return len(self.ethnicities)

    @classmethod
    def with_sizes(cls, n_diagnoses, n_procedures, n_medications, n_lab_codes, n_ethnicities):
        return cls(
            diagnoses=tuple(f"DX{i:03d}" for i in range(n_diagnoses)),
            procedures=tuple(f"PR{i:03d}" for i in range(n_procedures)),
            medications=tuple(f"MED{i:03d}" for i in range(n_medications)),
            lab_codes=tuple(f"LAB{i:03d}" for i in range(n_lab_codes)),
            ethnicities=tuple(f"ETH{i:d}" for i in range(n_ethnicities)),
        )


@dataclass(frozen=True)
class Demographics:
    age: int
    gender: str
    ethnicity: int
    admission_seq: int

    def __post_init__(self):
        if not (MIN_AGE <= self.age <= MAX_AGE):
            raise CohortError(f"age {self.age} outside [{MIN_AGE}, {MAX_AGE}]")
        if self.gender not in GENDERS:
            raise CohortError(f"gender must be one of {GENDERS}")
        if self.admission_seq < 1:
            raise CohortError("admission_seq must be >= 1")


@dataclass(frozen=True)
class MedicationSet:
    """Binary medication combination over a vocabulary of size n."""

    n: int
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(set(self.indices)))
        object.__setattr__(self, "indices", idx)
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise CohortError(f"medication index outside [0, {self.n})")

    def __len__(self) -> int:
        return len(self.indices)

    def to_bits(self) -> np.ndarray:
        bits = np.zeros(self.n, dtype=np.uint8)
        if self.indices:
            bits[list(self.indices)] = 1
        return bits

    @classmethod
    def from_bits(cls, bits) -> "MedicationSet":
        arr = np.asarray(bits)
        return cls(n=arr.shape[0], indices=tuple(int(i) for i in np.flatnonzero(arr)))


@dataclass(frozen=True)
class HospitalizationRecord:
    """One ICU stay: code sets, recorded medications, and length of stay in days."""

    patient_id: int
    event_id: int
    diagnoses: tuple[int, ...]
    procedures: tuple[int, ...]  # multiset, stored sorted
    lab_events: tuple[tuple[int, int], ...]  # (code, flag); flag 1 = normal, 0 = abnormal
    demographics: Demographics
    medications: MedicationSet
    los: float

    def __post_init__(self):
        object.__setattr__(self, "diagnoses", tuple(sorted(set(self.diagnoses))))
        object.__setattr__(self, "procedures", tuple(sorted(self.procedures)))
        object.__setattr__(
            self, "lab_events", tuple(sorted((int(c), int(f)) for c, f in self.lab_events))
        )
        if self.los < 1.0:
            raise CohortError(f"los {self.los} < 1.0")
        if len(self.medications) == 0:
            raise CohortError("record has an empty medication set")


@dataclass(frozen=True)
class Cohort:
    vocabularies: Vocabularies
    records: tuple[HospitalizationRecord, ...]
    ddi_pairs: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        v = self.vocabularies
        seen_events = set()
        for r in self.records:
            if r.event_id in seen_events:
                raise CohortError(f"duplicate event_id {r.event_id}")
            seen_events.add(r.event_id)
            if r.diagnoses and r.diagnoses[-1] >= v.n_diagnoses:
                raise CohortError(f"event {r.event_id}: diagnosis index out of range")
            if r.procedures and r.procedures[-1] >= v.n_procedures:
                raise CohortError(f"event {r.event_id}: procedure index out of range")
            if r.medications.n != v.n_medications:
                raise CohortError(f"event {r.event_id}: medication vector length mismatch")
            for code, flag in r.lab_events:
                if not (0 <= code < v.n_lab_codes):
                    raise CohortError(f"event {r.event_id}: lab code out of range")
                if flag not in (0, 1):
                    raise CohortError(f"event {r.event_id}: lab flag must be 0 or 1")
            if not (0 <= r.demographics.ethnicity < v.n_ethnicities):
                raise CohortError(f"event {r.event_id}: ethnicity index out of range")
        for a, b in self.ddi_pairs:
            if not (0 <= a < b < v.n_medications):
                raise CohortError(f"ddi pair ({a}, {b}) invalid")

    @property
    def n_records(self) -> int:
        return len(self.records)

    def patient_ids(self) -> tuple[int, ...]:
        return tuple(sorted({r.patient_id for r in self.records}))


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic generator.

    Each procedure gets a hidden ideal medication subset and an integer base
    stay; recorded medications are the ideal union perturbed by per-drug miss
    and extra probabilities, and the stay grows by c_miss / c_extra days per
    deviation, so better medication sets map to shorter stays.
    """

    n_diagnoses: int = 40
    n_procedures: int = 18
    n_medications: int = 24
    n_lab_codes: int = 30
    n_ethnicities: int = 5
    n_patients: int = 1000
    min_events_per_patient: int = 1
    max_events_per_patient: int = 3
    min_procs_per_event: int = 1
    max_procs_per_event: int = 3
    procedure_skew: float = 1.5  # Zipf exponent; popular procedures repeat across patients
    min_diags_per_event: int = 1
    max_diags_per_event: int = 5
    min_labs_per_event: int = 3
    max_labs_per_event: int = 8
    min_ideal_meds: int = 2
    max_ideal_meds: int = 4
    q_miss: float = 0.3
    q_extra: float = 0.05
    base_los_min: int = 3
    base_los_max: int = 12
    c_miss: float = 0.75
    c_extra: float = 0.75
    noise_choices: tuple[int, ...] = (-1, 0, 1)
    ddi_density: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("q_miss", "q_extra", "ddi_density"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise CohortError(f"{name}={p} outside [0, 1]")
        if self.c_miss < 0 or self.c_extra < 0:
            raise CohortError("c_miss and c_extra must be >= 0")
        if self.n_patients < 1:
            raise CohortError("n_patients must be >= 1")
        for name in ("n_diagnoses", "n_procedures", "n_medications", "n_lab_codes", "n_ethnicities"):
            if getattr(self, name) < 1:
                raise CohortError(f"{name} must be >= 1")
        if self.min_events_per_patient < 1:
            raise CohortError("min_events_per_patient must be >= 1")
        if self.max_ideal_meds > self.n_medications:
            raise CohortError("max_ideal_meds exceeds medication vocabulary")
        if self.max_diags_per_event > self.n_diagnoses:
            raise CohortError("max_diags_per_event exceeds diagnosis vocabulary")
        if self.max_labs_per_event > self.n_lab_codes:
            raise CohortError("max_labs_per_event exceeds lab vocabulary")


def _round_days(x: float) -> float:
    """Whole-day stay, half rounding up, floored at one day."""
    return max(1.0, float(np.floor(x + 0.5)))


def generate_cohort_with_oracle(config: GeneratorConfig) -> tuple[Cohort, dict]:
    """Generate a cohort plus the hidden per-procedure oracle (tests only).

    Deterministic for a fixed config; the oracle maps each procedure index to
    its ideal medication list and integer base stay.
    """
    rng = np.random.default_rng(config.seed)
    vocab = Vocabularies.with_sizes(
        config.n_diagnoses,
        config.n_procedures,
        config.n_medications,
        config.n_lab_codes,
        config.n_ethnicities,
    )

    ideal_sets: list[tuple[int, ...]] = []
    base_los: list[int] = []
    for _ in range(config.n_procedures):
        size = int(rng.integers(config.min_ideal_meds, config.max_ideal_meds + 1))
        ideal = tuple(sorted(int(m) for m in rng.choice(config.n_medications, size=size, replace=False)))
        ideal_sets.append(ideal)
        base_los.append(int(rng.integers(config.base_los_min, config.base_los_max + 1)))

    # Zipf-style popularity so exact procedure multisets recur across patients.
    ranks = np.arange(1, config.n_procedures + 1, dtype=float)
    proc_weights = ranks ** (-config.procedure_skew)
    proc_weights /= proc_weights.sum()

    records: list[HospitalizationRecord] = []
    event_id = 0
    noise_choices = tuple(config.noise_choices) if config.noise_choices else (0,)
    for patient_id in range(config.n_patients):
        age = int(rng.integers(MIN_AGE, MAX_AGE + 1))
        gender = GENDERS[int(rng.integers(0, 2))]
        ethnicity = int(rng.integers(0, config.n_ethnicities))
        n_events = int(rng.integers(config.min_events_per_patient, config.max_events_per_patient + 1))
        for seq in range(1, n_events + 1):
            n_procs = int(rng.integers(config.min_procs_per_event, config.max_procs_per_event + 1))
            procs = tuple(sorted(int(p) for p in rng.choice(config.n_procedures, size=n_procs, replace=True, p=proc_weights)))
            ideal_union = sorted(set().union(*(ideal_sets[p] for p in procs)))

            meds: set[int] = set()
            for d in ideal_union:
                if rng.random() >= config.q_miss:
                    meds.add(d)
            for d in range(config.n_medications):
                if d not in ideal_union and rng.random() < config.q_extra:
                    meds.add(d)
            # Fallback index is drawn unconditionally so the rng stream stays
            # aligned across q_miss / q_extra variants of the same seed.
            fallback = int(rng.integers(0, len(ideal_union)))
            if not meds:  # records must carry at least one medication
                meds.add(ideal_union[fallback])

            n_miss = len(set(ideal_union) - meds)
            n_extra = len(meds - set(ideal_union))
            base = float(np.mean([base_los[p] for p in procs]))
            noise = float(noise_choices[int(rng.integers(0, len(noise_choices)))])
            los = _round_days(base + config.c_miss * n_miss + config.c_extra * n_extra + noise)

            n_diags = int(rng.integers(config.min_diags_per_event, config.max_diags_per_event + 1))
            diags = tuple(sorted(int(d) for d in rng.choice(config.n_diagnoses, size=n_diags, replace=False)))
            n_labs = int(rng.integers(config.min_labs_per_event, config.max_labs_per_event + 1))
            lab_codes = rng.choice(config.n_lab_codes, size=n_labs, replace=False)
            labs = tuple((int(c), int(rng.integers(0, 2))) for c in sorted(lab_codes))

            records.append(
                HospitalizationRecord(
                    patient_id=patient_id,
                    event_id=event_id,
                    diagnoses=diags,
                    procedures=procs,
                    lab_events=labs,
                    demographics=Demographics(age=age, gender=gender, ethnicity=ethnicity, admission_seq=seq),
                    medications=MedicationSet(n=config.n_medications, indices=tuple(sorted(meds))),
                    los=los,
                )
            )
            event_id += 1

    ddi: set[tuple[int, int]] = set()
    for a in range(config.n_medications):
        for b in range(a + 1, config.n_medications):
            if rng.random() < config.ddi_density:
                ddi.add((a, b))

    cohort = Cohort(vocabularies=vocab, records=tuple(records), ddi_pairs=frozenset(ddi))
    oracle = {
        "ideal_sets": {str(p): list(ideal_sets[p]) for p in range(config.n_procedures)},
        "base_los": {str(p): base_los[p] for p in range(config.n_procedures)},
        "config": {"c_miss": config.c_miss, "c_extra": config.c_extra,
                   "q_miss": config.q_miss, "q_extra": config.q_extra},
    }
    return cohort, oracle


def generate_cohort(config: GeneratorConfig) -> Cohort:
    return generate_cohort_with_oracle(config)[0]


def split_cohort(cohort: Cohort, ratios: tuple[float, float, float], seed: int) -> tuple[Cohort, Cohort, Cohort]:
    """Partition by patient so no patient appears in two splits."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise CohortError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    patients = list(cohort.patient_ids())
    if len(patients) < 3:
        raise CohortError(f"need at least 3 patients to split, have {len(patients)}")

    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    n = len(order)
    cut1 = int(np.floor(ratios[0] * n))
    cut2 = int(np.floor((ratios[0] + ratios[1]) * n))
    assignment: dict[int, int] = {}
    for pos, pid in enumerate(order):
        assignment[pid] = 0 if pos < cut1 else (1 if pos < cut2 else 2)

    buckets: tuple[list, list, list] = ([], [], [])
    for r in cohort.records:
        buckets[assignment[r.patient_id]].append(r)
    return tuple(
        Cohort(vocabularies=cohort.vocabularies, records=tuple(b), ddi_pairs=cohort.ddi_pairs)
        for b in buckets
    )


# --- persistence ------------------------------------------------------------

def _record_to_obj(r: HospitalizationRecord) -> dict:
    return {
        "patient_id": r.patient_id,
        "event_id": r.event_id,
        "diagnoses": list(r.diagnoses),
        "procedures": list(r.procedures),
        "lab_events": [list(le) for le in r.lab_events],
        "demographics": {
            "age": r.demographics.age,
            "gender": r.demographics.gender,
            "ethnicity": r.demographics.ethnicity,
            "admission_seq": r.demographics.admission_seq,
        },
        "medications": list(r.medications.indices),
        "los": r.los,
    }


def _record_from_obj(obj: dict, vocab: Vocabularies, line_no: int) -> HospitalizationRecord:
    try:
        demo = obj["demographics"]
        return HospitalizationRecord(
            patient_id=int(obj["patient_id"]),
            event_id=int(obj["event_id"]),
            diagnoses=tuple(int(d) for d in obj["diagnoses"]),
            procedures=tuple(int(p) for p in obj["procedures"]),
            lab_events=tuple((int(c), int(f)) for c, f in obj["lab_events"]),
            demographics=Demographics(
                age=int(demo["age"]),
                gender=str(demo["gender"]),
                ethnicity=int(demo["ethnicity"]),
                admission_seq=int(demo["admission_seq"]),
            ),
            medications=MedicationSet(n=vocab.n_medications, indices=tuple(int(m) for m in obj["medications"])),
            los=float(obj["los"]),
        )
    except KeyError as e:
        raise CohortParseError(line_no, f"record missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise CohortParseError(line_no, f"bad record value: {e}") from e


def write_cohort(cohort: Cohort, path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "counts": {
            "diagnoses": cohort.vocabularies.n_diagnoses,
            "procedures": cohort.vocabularies.n_procedures,
            "medications": cohort.vocabularies.n_medications,
            "lab_codes": cohort.vocabularies.n_lab_codes,
            "ethnicities": cohort.vocabularies.n_ethnicities,
            "records": cohort.n_records,
        },
        "vocabularies": {
            "diagnoses": list(cohort.vocabularies.diagnoses),
            "procedures": list(cohort.vocabularies.procedures),
            "medications": list(cohort.vocabularies.medications),
            "lab_codes": list(cohort.vocabularies.lab_codes),
            "ethnicities": list(cohort.vocabularies.ethnicities),
        },
        "ddi_pairs": [list(p) for p in sorted(cohort.ddi_pairs)],
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for r in cohort.records:
            f.write(json.dumps(_record_to_obj(r), separators=(",", ":")) + "\n")


def read_cohort(path) -> Cohort:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise CohortParseError(1, "empty cohort file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CohortParseError(1, f"bad header: {e.msg}") from e
    if not isinstance(header, dict) or "vocabularies" not in header:
        raise CohortSchemaError("first line is not a cohort header with vocabularies")
    if header.get("format_version") != FORMAT_VERSION:
        raise CohortSchemaError(f"unsupported format_version {header.get('format_version')}")
    voc = header["vocabularies"]
    try:
        vocab = Vocabularies(
            diagnoses=tuple(voc["diagnoses"]),
            procedures=tuple(voc["procedures"]),
            medications=tuple(voc["medications"]),
            lab_codes=tuple(voc["lab_codes"]),
            ethnicities=tuple(voc["ethnicities"]),
        )
    except KeyError as e:
        raise CohortSchemaError(f"header missing vocabulary {e}") from e

    records = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CohortParseError(i, f"bad record: {e.msg}") from e
        records.append(_record_from_obj(obj, vocab, i))

    ddi = frozenset((int(a), int(b)) for a, b in header.get("ddi_pairs", []))
    try:
        return Cohort(vocabularies=vocab, records=tuple(records), ddi_pairs=ddi)
    except CohortError as e:
        raise CohortSchemaError(str(e)) from e


def read_ddi_csv(path, n_medications: int) -> frozenset[tuple[int, int]]:
    """Load unordered DDI pairs from a two-column CSV; duplicates ignored."""
    pairs: set[tuple[int, int]] = set()
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row_no, row in enumerate(csv.reader(f), start=1):
            if not row or not row[0].strip():
                continue
            if row_no == 1 and not row[0].strip().lstrip("-").isdigit():
                continue  # header row
            if len(row) < 2:
                raise CohortParseError(row_no, "expected two columns med_a,med_b")
            try:
                a, b = int(row[0]), int(row[1])
            except ValueError as e:
                raise CohortParseError(row_no, f"non-integer index: {e}") from e
            if a == b:
                continue
            lo, hi = min(a, b), max(a, b)
            if not (0 <= lo and hi < n_medications):
                raise CohortSchemaError(f"ddi pair ({a}, {b}) outside medication vocabulary")
            pairs.add((lo, hi))
    return frozenset(pairs)


def write_ddi_csv(pairs, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["med_a", "med_b"])
        for a, b in sorted(pairs):
            w.writerow([a, b])


def write_oracle(oracle: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(oracle, f, indent=1, sort_keys=True)
        f.write("\n")


def read_oracle(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
