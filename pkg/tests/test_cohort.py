import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medrec.cohort import (
    Cohort,
    CohortError,
    CohortParseError,
    Demographics,
    GeneratorConfig,
    HospitalizationRecord,
    MedicationSet,
    Vocabularies,
    generate_cohort,
    generate_cohort_with_oracle,
    read_cohort,
    read_ddi_csv,
    split_cohort,
    write_cohort,
    write_ddi_csv,
)


def small_config(**kw):
    base = dict(n_patients=50, seed=0)
    base.update(kw)
    return GeneratorConfig(**base)


# --- types -------------------------------------------------------------------

def test_medication_set_bits_round_trip():
    ms = MedicationSet(n=8, indices=(5, 1, 3, 1))
    assert ms.indices == (1, 3, 5)
    bits = ms.to_bits()
    assert bits.tolist() == [0, 1, 0, 1, 0, 1, 0, 0]
    assert MedicationSet.from_bits(bits) == ms


def test_medication_set_rejects_out_of_range():
    with pytest.raises(CohortError):
        MedicationSet(n=4, indices=(4,))


def test_demographics_age_bounds():
    with pytest.raises(CohortError):
        Demographics(age=17, gender="F", ethnicity=0, admission_seq=1)
    Demographics(age=18, gender="M", ethnicity=0, admission_seq=1)


def test_record_requires_los_and_meds():
    demo = Demographics(age=40, gender="F", ethnicity=0, admission_seq=1)
    with pytest.raises(CohortError):
        HospitalizationRecord(
            patient_id=0, event_id=0, diagnoses=(0,), procedures=(0,),
            lab_events=(), demographics=demo,
            medications=MedicationSet(n=4, indices=(0,)), los=0.5,
        )
    with pytest.raises(CohortError):
        HospitalizationRecord(
            patient_id=0, event_id=0, diagnoses=(0,), procedures=(0,),
            lab_events=(), demographics=demo,
            medications=MedicationSet(n=4, indices=()), los=3.0,
        )


def test_vocabularies_reject_duplicates():
    with pytest.raises(CohortError):
        Vocabularies(
            diagnoses=("A", "A"), procedures=("P",), medications=("M",),
            lab_codes=("L",), ethnicities=("E",),
        )


# --- generator ---------------------------------------------------------------

def test_zero_perturbation_meds_equal_ideal_union():
    cfg = small_config(q_miss=0.0, q_extra=0.0, noise_choices=(0,))
    cohort, oracle = generate_cohort_with_oracle(cfg)
    ideal = {int(p): set(v) for p, v in oracle["ideal_sets"].items()}
    for r in cohort.records:
        union = set().union(*(ideal[p] for p in r.procedures))
        assert set(r.medications.indices) == union


def test_zero_perturbation_single_procedure_los_is_base_exactly():
    cfg = small_config(q_miss=0.0, q_extra=0.0, noise_choices=(0,),
                       min_procs_per_event=1, max_procs_per_event=1)
    cohort, oracle = generate_cohort_with_oracle(cfg)
    base = {int(p): float(v) for p, v in oracle["base_los"].items()}
    for r in cohort.records:
        assert r.los == base[r.procedures[0]]


def test_same_seed_byte_identical(tmp_path):
    cfg = small_config(seed=7)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_cohort(generate_cohort(cfg), p1)
    write_cohort(generate_cohort(cfg), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_miss_probability_shifts_mean_los_by_analytic_amount():
    # Matched-seed pair: structure and noise are rng-aligned, only the
    # medication drops differ. With c_miss=1.0 the shift is an integer per
    # record, so rounding cancels exactly in the difference of means.
    cfg1 = GeneratorConfig(n_patients=1000, c_miss=1.0, q_miss=0.3, q_extra=0.0, seed=3)
    cfg0 = GeneratorConfig(n_patients=1000, c_miss=1.0, q_miss=0.0, q_extra=0.0, seed=3)
    cohort1, oracle = generate_cohort_with_oracle(cfg1)
    cohort0 = generate_cohort(cfg0)
    assert cohort1.n_records == cohort0.n_records

    ideal = {int(p): set(v) for p, v in oracle["ideal_sets"].items()}
    union_sizes = [
        len(set().union(*(ideal[p] for p in r.procedures))) for r in cohort1.records
    ]
    expected_shift = cfg1.q_miss * float(np.mean(union_sizes)) * cfg1.c_miss

    got_shift = float(np.mean([r.los for r in cohort1.records]) -
                      np.mean([r.los for r in cohort0.records]))
    assert abs(got_shift - expected_shift) / expected_shift < 0.05


def test_los_monotone_in_missing_count_noise_fixed():
    cfg = small_config(q_miss=0.4, q_extra=0.0, noise_choices=(0,), seed=11)
    cohort, oracle = generate_cohort_with_oracle(cfg)
    ideal = {int(p): set(v) for p, v in oracle["ideal_sets"].items()}
    base = {int(p): float(v) for p, v in oracle["base_los"].items()}
    for r in cohort.records:
        union = set().union(*(ideal[p] for p in r.procedures))
        n_miss = len(union - set(r.medications.indices))
        expect = np.floor(np.mean([base[p] for p in r.procedures]) + cfg.c_miss * n_miss + 0.5)
        assert r.los == max(1.0, expect)


def test_generated_los_floor():
    cohort = generate_cohort(small_config(base_los_min=3, base_los_max=3, seed=2))
    assert all(r.los >= 1.0 for r in cohort.records)


def test_generator_rejects_bad_config():
    with pytest.raises(CohortError):
        GeneratorConfig(q_miss=1.5)
    with pytest.raises(CohortError):
        GeneratorConfig(n_patients=0)
    with pytest.raises(CohortError):
        GeneratorConfig(c_miss=-1.0)


# --- split -------------------------------------------------------------------

def test_split_10_patients_default_ratios():
    cohort = generate_cohort(small_config(n_patients=10))
    train, val, test = split_cohort(cohort, (0.7, 0.15, 0.15), seed=0)
    n = tuple(len(c.patient_ids()) for c in (train, val, test))
    assert n[0] == 7 and 1 <= n[1] <= 2 and 1 <= n[2] <= 2 and sum(n) == 10
    assert not (set(train.patient_ids()) & set(val.patient_ids()))
    assert not (set(train.patient_ids()) & set(test.patient_ids()))
    assert not (set(val.patient_ids()) & set(test.patient_ids()))


def test_split_degenerate_all_train():
    cohort = generate_cohort(small_config(n_patients=10))
    train, val, test = split_cohort(cohort, (1.0, 0.0, 0.0), seed=5)
    assert train.n_records == cohort.n_records
    assert val.n_records == 0 and test.n_records == 0


def test_split_30_seeds_disjoint_and_distinct():
    cohort = generate_cohort(small_config(n_patients=40))
    partitions = set()
    for seed in range(30):
        train, val, test = split_cohort(cohort, (0.7, 0.15, 0.15), seed=seed)
        ids = (train.patient_ids(), val.patient_ids(), test.patient_ids())
        # brute-force membership scan
        seen = {}
        for part_i, part in enumerate(ids):
            for pid in part:
                assert pid not in seen
                seen[pid] = part_i
        assert len(seen) == 40
        partitions.add(ids)
    assert len(partitions) == 30


def test_split_too_few_patients():
    cohort = generate_cohort(small_config(n_patients=2))
    with pytest.raises(CohortError):
        split_cohort(cohort, (0.7, 0.15, 0.15), seed=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n_patients=st.integers(3, 25))
def test_split_disjointness_property(seed, n_patients):
    cohort = generate_cohort(small_config(n_patients=n_patients, seed=seed % 7))
    parts = split_cohort(cohort, (0.7, 0.15, 0.15), seed=seed)
    all_ids = [pid for c in parts for pid in c.patient_ids()]
    assert len(all_ids) == len(set(all_ids)) == len(cohort.patient_ids())


# --- persistence -------------------------------------------------------------

def test_round_trip_identity(tmp_path):
    cohort = generate_cohort(small_config(n_patients=40))
    path = tmp_path / "c.jsonl"
    write_cohort(cohort, path)
    assert read_cohort(path) == cohort


def test_truncated_file_parse_error(tmp_path):
    cohort = generate_cohort(small_config(n_patients=10))
    path = tmp_path / "c.jsonl"
    write_cohort(cohort, path)
    text = path.read_text()
    path.write_text(text[: len(text) * 2 // 3])
    with pytest.raises(CohortParseError) as err:
        read_cohort(path)
    assert "line" in str(err.value)


def test_hand_written_fixture(tmp_path):
    header = {
        "format_version": 1,
        "vocabularies": {
            "diagnoses": ["DX000", "DX001"],
            "procedures": ["PR000", "PR001"],
            "medications": ["MED000", "MED001", "MED002"],
            "lab_codes": ["LAB000"],
            "ethnicities": ["ETH0"],
        },
        "ddi_pairs": [[0, 2]],
    }
    rec = {
        "patient_id": 4, "event_id": 9,
        "diagnoses": [1], "procedures": [0, 0],
        "lab_events": [[0, 1]],
        "demographics": {"age": 52, "gender": "F", "ethnicity": 0, "admission_seq": 2},
        "medications": [0, 2], "los": 6.0,
    }
    rec2 = {
        "patient_id": 5, "event_id": 10,
        "diagnoses": [0, 1], "procedures": [1],
        "lab_events": [],
        "demographics": {"age": 30, "gender": "M", "ethnicity": 0, "admission_seq": 1},
        "medications": [1], "los": 2.0,
    }
    path = tmp_path / "fixture.jsonl"
    path.write_text("\n".join(json.dumps(o) for o in (header, rec, rec2)) + "\n")

    cohort = read_cohort(path)
    assert cohort.n_records == 2
    r = cohort.records[0]
    assert r.patient_id == 4 and r.event_id == 9
    assert r.diagnoses == (1,) and r.procedures == (0, 0)
    assert r.lab_events == ((0, 1),)
    assert r.demographics.age == 52 and r.demographics.gender == "F"
    assert r.medications.indices == (0, 2) and r.los == 6.0
    assert cohort.records[1].medications.indices == (1,)
    assert cohort.ddi_pairs == frozenset({(0, 2)})


def test_ddi_csv_round_trip(tmp_path):
    pairs = frozenset({(0, 3), (1, 2)})
    path = tmp_path / "ddi.csv"
    write_ddi_csv(pairs, path)
    assert read_ddi_csv(path, n_medications=4) == pairs
    # duplicates and reversed order collapse
    path.write_text("med_a,med_b\n3,0\n0,3\n1,2\n")
    assert read_ddi_csv(path, n_medications=4) == pairs
