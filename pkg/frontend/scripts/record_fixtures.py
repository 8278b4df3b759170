"""Record live service responses into tests/fixtures/*.json.

Run from the repository root after installing the python package:

    python frontend/scripts/record_fixtures.py

The UI contract tests replay these bodies through a mock server, so the
frontend is pinned to real wire bytes without needing the backend at test
time. Re-run whenever the API schema changes.
"""

import json
import pathlib
import sys

from fastapi.testclient import TestClient

from medrec.cohort import GeneratorConfig, generate_cohort, write_cohort
from medrec.predictor import ModelConfig
from medrec.retrieval import RetrievalConfig
from medrec.service import build_app, load_state, record_document
from medrec.trainer import TrainConfig, train
from medrec.predictor import save_checkpoint

FIXTURE_DIR = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def state_doc(record) -> dict:
    doc = record_document(record)
    doc.pop("patient_id")
    doc.pop("event_id")
    return doc


def record_fixture(name: str, method: str, path: str, request, status: int, body) -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    payload = {"name": name, "method": method, "path": path,
               "request": request, "status": status, "body": body}
    out = FIXTURE_DIR / f"{name}.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out}")


def main() -> int:
    import tempfile

    # concentrated procedures keep retrieval pools well above the k override,
    # so different medication sets genuinely retrieve different neighbors
    cohort = generate_cohort(GeneratorConfig(
        n_patients=150, n_procedures=5, min_procs_per_event=1,
        max_procs_per_event=1, seed=7))
    mid = cohort.n_records // 2
    from medrec.cohort import Cohort
    tr = Cohort(vocabularies=cohort.vocabularies, records=cohort.records[:mid],
                ddi_pairs=cohort.ddi_pairs)
    va = Cohort(vocabularies=cohort.vocabularies, records=cohort.records[mid:],
                ddi_pairs=cohort.ddi_pairs)
    result = train(tr, va, TrainConfig(max_epochs=2, batch_size=16, seed=0),
                   model_cfg=ModelConfig(d_model=8), retr_cfg=RetrievalConfig(k=10))

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = f"{tmp}/model.ckpt"
        idx = f"{tmp}/index.jsonl"
        save_checkpoint(result.params, ckpt)
        write_cohort(cohort, idx)
        state = load_state(ckpt, idx)
        client = TestClient(build_app(state))

        r = client.get("/api/vocab")
        record_fixture("vocab", "GET", "/api/vocab", None, r.status_code, r.json())
        r = client.get("/api/health")
        record_fixture("health", "GET", "/api/health", None, r.status_code, r.json())

        # find a patient whose recorded, model, and edited medication sets all
        # retrieve at least one neighbor
        chosen = None
        for rec in cohort.records:
            doc = state_doc(rec)
            pr = client.post("/api/predict", json=doc).json()
            sets = {"recorded": sorted(rec.medications.indices),
                    "model": sorted(pr["predicted"])}
            extra = next((m for m in range(cohort.vocabularies.n_medications)
                          if m not in pr["predicted"]), None)
            if extra is None:
                continue
            sets["edited"] = sorted(pr["predicted"] + [extra])
            replies = {}
            for tag, meds in sets.items():
                resp = client.post("/api/counterfactual",
                                   json={"state": doc, "medications": meds, "k": 3})
                if resp.status_code != 200:
                    break
                replies[tag] = resp.json()
            if len(replies) == 3 and len({replies[t]["elos"] for t in replies}) == 3:
                chosen = (rec, doc, pr, sets, replies)
                break
        if chosen is None:
            print("no suitable patient found", file=sys.stderr)
            return 1

        rec, doc, pr, sets, replies = chosen
        r = client.get(f"/api/patients/{rec.event_id}")
        record_fixture("patient", "GET", f"/api/patients/{rec.event_id}", None,
                       r.status_code, r.json())
        record_fixture("predict", "POST", "/api/predict", doc, 200, pr)
        for tag in ("recorded", "model", "edited"):
            record_fixture(f"cf_{tag}", "POST", "/api/counterfactual",
                           {"state": doc, "medications": sets[tag], "k": 3},
                           200, replies[tag])

        # unseen procedure multiset: guaranteed empty pool
        empty_doc = dict(doc)
        empty_doc["procedures"] = [0] * 7
        r = client.post("/api/counterfactual",
                        json={"state": empty_doc, "medications": sets["recorded"], "k": 3})
        record_fixture("cf_empty", "POST", "/api/counterfactual",
                       {"state": empty_doc, "medications": sets["recorded"], "k": 3},
                       r.status_code, r.json())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
