"""HTTP API over a loaded checkpoint and retrieval index.

Endpoints: POST /api/predict, POST /api/counterfactual, GET /api/health,
GET /api/vocab, GET /api/patients/{id}. Responses are pure functions of the
request and the immutable loaded state; bodies use sorted JSON keys so
identical requests yield identical bytes. Error bodies: {error, field?}.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import __version__
from .cohort import (
    GENDERS,
    MAX_AGE,
    MIN_AGE,
    Cohort,
    Demographics,
    HospitalizationRecord,
    MedicationSet,
    Vocabularies,
    read_cohort,
)
from .predictor import ModelParams, checkpoint_digest, encode_batch, forward, load_checkpoint, predict_set
from .retrieval import ZERO_REWARD, RetrievalConfig, RetrievalIndex, build_index, query_counterfactual


class StableJSONResponse(JSONResponse):
    def render(self, content) -> bytes:
        return json.dumps(content, sort_keys=True, separators=(",", ":")).encode("utf-8")


class ApiError(Exception):
    def __init__(self, status: int, error: str, field: str | None = None):
        super().__init__(error)
        self.status = status
        self.error = error
        self.field = field

    def body(self) -> dict:
        out = {"error": self.error}
        if self.field is not None:
            out["field"] = self.field
        return out


@dataclass(frozen=True)
class ApiState:
    """Immutable after startup; shared across request handlers."""

    params: ModelParams
    index: RetrievalIndex
    vocab: Vocabularies
    records_by_event: dict
    digest: str
    retrieval: RetrievalConfig


def load_state(checkpoint_path, index_cohort_path,
               retrieval: RetrievalConfig | None = None) -> ApiState:
    params = load_checkpoint(checkpoint_path)
    cohort = read_cohort(index_cohort_path)
    if params.n_medications != cohort.vocabularies.n_medications:
        raise ValueError("checkpoint and index cohort medication vocabularies differ")
    retrieval = retrieval or RetrievalConfig(empty_pool_policy=ZERO_REWARD)
    retrieval = dataclasses.replace(retrieval, empty_pool_policy=ZERO_REWARD)
    return ApiState(
        params=params,
        index=build_index(cohort, split_tag=os.path.basename(str(index_cohort_path))),
        vocab=cohort.vocabularies,
        records_by_event={r.event_id: r for r in cohort.records},
        digest=checkpoint_digest(checkpoint_path),
        retrieval=retrieval,
    )


# ---------------------------------------------------------------- validation


def _want_int(value, field):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ApiError(400, "expected an integer", field)
    return value


def _want_list(value, field):
    if not isinstance(value, list):
        raise ApiError(400, "expected an array", field)
    return value


def _code_list(value, field, size, allow_repeats):
    out = []
    seen = set()
    for pos, item in enumerate(_want_list(value, field)):
        code = _want_int(item, f"{field}[{pos}]")
        if not (0 <= code < size):
            raise ApiError(422, f"code index {code} outside [0, {size})", f"{field}[{pos}]")
        if not allow_repeats and code in seen:
            raise ApiError(400, "duplicate code", f"{field}[{pos}]")
        seen.add(code)
        out.append(code)
    return out


_STATE_FIELDS = {"diagnoses", "procedures", "labs", "demographics", "medications", "los"}
_DEMO_FIELDS = {"age", "gender", "ethnicity", "admission_seq"}


def parse_state(doc, vocab: Vocabularies, field_prefix: str = "") -> HospitalizationRecord:
    """Validate a patient-state document; 400 for shape, 422 for ranges."""
    pre = field_prefix
    if not isinstance(doc, dict):
        raise ApiError(400, "state must be an object", pre or None)
    for key in doc:
        if key not in _STATE_FIELDS:
            raise ApiError(400, "unknown field", f"{pre}{key}")
    for key in ("diagnoses", "procedures", "labs", "demographics"):
        if key not in doc:
            raise ApiError(400, "missing field", f"{pre}{key}")

    diagnoses = _code_list(doc["diagnoses"], f"{pre}diagnoses", vocab.n_diagnoses, False)
    procedures = _code_list(doc["procedures"], f"{pre}procedures", vocab.n_procedures, True)
    labs = []
    for pos, item in enumerate(_want_list(doc["labs"], f"{pre}labs")):
        where = f"{pre}labs[{pos}]"
        if not isinstance(item, list) or len(item) != 2:
            raise ApiError(400, "expected [code, flag]", where)
        code = _want_int(item[0], where)
        flag = _want_int(item[1], where)
        if not (0 <= code < vocab.n_lab_codes):
            raise ApiError(422, f"code index {code} outside [0, {vocab.n_lab_codes})", where)
        if flag not in (0, 1):
            raise ApiError(400, "lab flag must be 0 or 1", where)
        labs.append((code, flag))

    demo = doc["demographics"]
    if not isinstance(demo, dict):
        raise ApiError(400, "expected an object", f"{pre}demographics")
    for key in demo:
        if key not in _DEMO_FIELDS:
            raise ApiError(400, "unknown field", f"{pre}demographics.{key}")
    for key in _DEMO_FIELDS:
        if key not in demo:
            raise ApiError(400, "missing field", f"{pre}demographics.{key}")
    age = _want_int(demo["age"], f"{pre}demographics.age")
    if not (MIN_AGE <= age <= MAX_AGE):
        raise ApiError(422, f"age outside [{MIN_AGE}, {MAX_AGE}]", f"{pre}demographics.age")
    gender = demo["gender"]
    if gender not in GENDERS:
        raise ApiError(400, f"gender must be one of {list(GENDERS)}", f"{pre}demographics.gender")
    ethnicity = _want_int(demo["ethnicity"], f"{pre}demographics.ethnicity")
    if not (0 <= ethnicity < vocab.n_ethnicities):
        raise ApiError(422, f"code index {ethnicity} outside [0, {vocab.n_ethnicities})",
                       f"{pre}demographics.ethnicity")
    seq = _want_int(demo["admission_seq"], f"{pre}demographics.admission_seq")
    if seq < 1:
        raise ApiError(422, "admission_seq must be >= 1", f"{pre}demographics.admission_seq")

    if "los" in doc and not isinstance(doc["los"], (int, float)):
        raise ApiError(400, "expected a number", f"{pre}los")
    meds = [0]
    if "medications" in doc:
        meds = _code_list(doc["medications"], f"{pre}medications", vocab.n_medications, False)

    # placeholder ids and medications: encoding uses codes and demographics only
    return HospitalizationRecord(
        patient_id=0, event_id=0,
        diagnoses=tuple(diagnoses), procedures=tuple(procedures),
        lab_events=tuple(labs),
        demographics=Demographics(age=age, gender=gender, ethnicity=ethnicity,
                                  admission_seq=seq),
        medications=MedicationSet(n=vocab.n_medications, indices=tuple(meds) or (0,)),
        los=max(1.0, float(doc.get("los", 1.0))),
    )


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:
        raise ApiError(400, "request body is not valid JSON")
    if not isinstance(body, dict):
        raise ApiError(400, "request body must be a JSON object")
    return body


def record_document(record: HospitalizationRecord) -> dict:
    return {
        "patient_id": record.patient_id,
        "event_id": record.event_id,
        "diagnoses": list(record.diagnoses),
        "procedures": list(record.procedures),
        "labs": [list(pair) for pair in record.lab_events],
        "demographics": {
            "age": record.demographics.age,
            "gender": record.demographics.gender,
            "ethnicity": record.demographics.ethnicity,
            "admission_seq": record.demographics.admission_seq,
        },
        "medications": list(record.medications.indices),
        "los": record.los,
    }


# ---------------------------------------------------------------- handlers


def build_app(state: ApiState, ui_dir=None) -> FastAPI:
    app = FastAPI(title="medrec", version=__version__,
                  default_response_class=StableJSONResponse)

    @app.exception_handler(ApiError)
    async def api_error_handler(_request, exc: ApiError):
        return StableJSONResponse(exc.body(), status_code=exc.status)

    @app.get("/api/health")
    async def health():
        return {"version": __version__, "checkpoint_digest": state.digest,
                "indexed_records": len(state.records_by_event)}

    @app.get("/api/vocab")
    async def vocab():
        v = state.vocab
        return {
            "diagnoses": list(v.diagnoses),
            "procedures": list(v.procedures),
            "medications": list(v.medications),
            "lab_codes": list(v.lab_codes),
            "ethnicities": list(v.ethnicities),
            "genders": list(GENDERS),
        }

    @app.get("/api/patients/{event_id}")
    async def patient(event_id: int):
        record = state.records_by_event.get(event_id)
        if record is None:
            raise ApiError(404, f"unknown patient event {event_id}")
        return record_document(record)

    @app.post("/api/predict")
    async def predict(request: Request):
        body = await _json_body(request)
        record = parse_state(body, state.vocab)
        batch = encode_batch([record], state.vocab)
        probs = forward(state.params, batch).value[0]
        pred = predict_set(probs, state.params.n_medications,
                           state.params.config.threshold)
        return {
            "probabilities": [float(p) for p in probs],
            "predicted": list(pred.indices),
            "labels": [state.vocab.medications[m] for m in pred.indices],
        }

    @app.post("/api/counterfactual")
    async def counterfactual(request: Request):
        body = await _json_body(request)
        for key in body:
            if key not in {"state", "medications", "k", "phi", "age_window"}:
                raise ApiError(400, "unknown field", key)
        if "state" not in body:
            raise ApiError(400, "missing field", "state")
        if "medications" not in body:
            raise ApiError(400, "missing field", "medications")
        record = parse_state(body["state"], state.vocab, field_prefix="state.")
        med_indices = _code_list(body["medications"], "medications",
                                 state.vocab.n_medications, False)

        overrides = {}
        for key, cast in (("k", int), ("phi", float), ("age_window", int)):
            if key in body:
                value = body[key]
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ApiError(400, "expected a number", key)
                overrides[key] = cast(value)
        try:
            cfg = dataclasses.replace(state.retrieval, **overrides)
        except ValueError as exc:
            raise ApiError(422, str(exc), ",".join(sorted(overrides)))

        alpha = MedicationSet(n=state.vocab.n_medications, indices=tuple(med_indices))
        recorded_los = body["state"].get("los")
        result = query_counterfactual(
            state.index, record.procedures, record.demographics.age, alpha, cfg,
            recorded_los=recorded_los,
        )
        if result["excluded"]:
            raise ApiError(404, "no comparable patients for this state and medication set")
        return {
            "elos": result["elos"],
            "reward_vs_recorded": result["reward"],
            "neighbors": result["neighbors"],
            "excluded": False,
        }

    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
