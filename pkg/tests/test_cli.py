"""End-to-end command-line tests; each command runs in-process via main()."""

import json

import pytest

from medrec.cli import main
from medrec.cohort import read_cohort
from medrec.predictor import load_checkpoint


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One generated + split + trained workspace shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cliwork")
    cohort = str(root / "cohort.jsonl")
    assert run("gen", "--patients", "40", "--seed", "3", "--out", cohort) == 0
    assert run("split", "--in", cohort, "--ratios", "0.7,0.15,0.15",
               "--seed", "0", "--out-prefix", str(root / "c")) == 0
    ckpt = str(root / "model.ckpt")
    history = str(root / "history.csv")
    assert run(
        "train", "--train", str(root / "c.train.jsonl"), "--val", str(root / "c.val.jsonl"),
        "--out-ckpt", ckpt, "--history", history,
        "--d-model", "8", "--batch-size", "16", "--max-epochs", "2", "--k", "10",
        "--seed", "0",
    ) == 0
    return root


def test_gen_writes_readable_cohort(tmp_path):
    out = tmp_path / "c.jsonl"
    assert run("gen", "--patients", "12", "--seed", "5", "--out", str(out)) == 0
    cohort = read_cohort(out)
    assert cohort.n_records >= 12


def test_gen_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("gen", "--patients", "15", "--seed", "9", "--out", str(a)) == 0
    assert run("gen", "--patients", "15", "--seed", "9", "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_config_file_equivalent_to_flags(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"patients": 10, "seed": 4, "q_miss": 0.2}))
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("gen", "--config", str(cfg), "--out", str(a)) == 0
    assert run("gen", "--patients", "10", "--seed", "4", "--q-miss", "0.2",
               "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_cli_flag_overrides_config(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"patients": 10, "seed": 4}))
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("gen", "--config", str(cfg), "--seed", "8", "--out", str(a)) == 0
    assert run("gen", "--patients", "10", "--seed", "8", "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_split_partitions_cohort(workdir):
    whole = read_cohort(workdir / "cohort.jsonl")
    parts = [read_cohort(workdir / f"c.{name}.jsonl") for name in ("train", "val", "test")]
    assert sum(p.n_records for p in parts) == whole.n_records
    ids = [set(r.patient_id for r in p.records) for p in parts]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_train_emits_checkpoint_and_history(workdir):
    params = load_checkpoint(workdir / "model.ckpt")
    assert params.config.d_model == 8
    lines = (workdir / "history.csv").read_text().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss,val_hb,val_elos,gate_entries,inner_steps"
    assert len(lines) == 3  # header + 2 epochs


def test_train_rerun_is_byte_identical(workdir, tmp_path):
    ckpt2 = tmp_path / "again.ckpt"
    hist2 = tmp_path / "again.csv"
    assert run(
        "train", "--train", str(workdir / "c.train.jsonl"), "--val", str(workdir / "c.val.jsonl"),
        "--out-ckpt", str(ckpt2), "--history", str(hist2),
        "--d-model", "8", "--batch-size", "16", "--max-epochs", "2", "--k", "10",
        "--seed", "0",
    ) == 0
    assert ckpt2.read_bytes() == (workdir / "model.ckpt").read_bytes()
    assert hist2.read_bytes() == (workdir / "history.csv").read_bytes()


def test_eval_and_analyze_deterministic(workdir, tmp_path):
    reports = []
    for name in ("r1", "r2"):
        report = tmp_path / f"{name}.txt"
        preds = tmp_path / f"{name}.preds.jsonl"
        assert run(
            "eval", "--checkpoint", str(workdir / "model.ckpt"),
            "--cohort", str(workdir / "c.test.jsonl"),
            "--index-cohort", str(workdir / "c.train.jsonl"),
            "--out", str(report), "--predictions-out", str(preds),
        ) == 0
        reports.append((report.read_bytes(), preds.read_bytes()))
    assert reports[0] == reports[1]
    assert b"jaccard" in reports[0][0]

    dirs = []
    for name in ("a1", "a2"):
        out_dir = tmp_path / name
        assert run(
            "analyze", "--predictions", str(tmp_path / "r1.preds.jsonl"),
            "--cohort", str(workdir / "c.test.jsonl"),
            "--out-dir", str(out_dir), "--k-range", "2,3", "--iterations", "6",
            "--seed", "0",
        ) == 0
        dirs.append(out_dir)
    files = sorted(p.name for p in dirs[0].iterdir())
    assert "embedding.csv" in files and "poincare.svg" in files
    for name in files:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


def test_query_prints_neighbor_table(workdir, tmp_path, capsys):
    cohort = read_cohort(workdir / "c.train.jsonl")
    record = cohort.records[0]
    state = {
        "procedures": list(record.procedures),
        "demographics": {"age": record.demographics.age, "gender": record.demographics.gender,
                         "ethnicity": record.demographics.ethnicity,
                         "admission_seq": record.demographics.admission_seq},
        "los": record.los,
    }
    state_path = tmp_path / "state.json"
    state_path.write_text(json.dumps(state))
    meds = ",".join(str(m) for m in record.medications.indices)
    assert run("query", "--index-cohort", str(workdir / "c.train.jsonl"),
               "--state-file", str(state_path), "--meds", meds, "--k", "5") == 0
    out = json.loads(capsys.readouterr().out)
    assert not out["excluded"]
    assert out["elos"] is not None
    assert out["reward"] == pytest.approx(record.los - out["elos"])
    assert 1 <= len(out["neighbors"]) <= 5
    # the record itself is indexed, so the top neighbor matches it exactly
    assert out["neighbors"][0]["similarity"] == pytest.approx(1.0)


def test_usage_errors_exit_2(workdir, tmp_path, capsys):
    assert run("train", "--val", str(workdir / "c.val.jsonl"),
               "--out-ckpt", str(tmp_path / "x.ckpt")) == 2
    assert "usage" in capsys.readouterr().err
    assert run("nonsense") == 2
    assert run("gen", "--patients", "5", "--seed", "0") == 2   # no --out
    assert run("split", "--in", str(workdir / "cohort.jsonl"), "--ratios", "0.5,oops",
               "--seed", "0", "--out-prefix", str(tmp_path / "s")) == 2


def test_domain_errors_exit_1(workdir, tmp_path, capsys):
    assert run("eval", "--checkpoint", str(tmp_path / "missing.ckpt"),
               "--cohort", str(workdir / "c.test.jsonl")) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1
    assert run("gen", "--patients", "5", "--seed", "0", "--q-miss", "1.5",
               "--out", str(tmp_path / "bad.jsonl")) == 1
