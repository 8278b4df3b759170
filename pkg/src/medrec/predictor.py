"""Multi-label medication predictor.

Four token groups (diagnoses, procedures, labs, demographics) are projected
into a shared width, offset by learned per-group position vectors, passed
through one post-norm transformer encoder layer, concatenated, and mapped to
per-label logistic probabilities.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .cohort import MAX_AGE, MIN_AGE, Cohort, HospitalizationRecord, MedicationSet, Vocabularies

CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-7
LN_EPS = 1e-5
N_GROUPS = 4  # diagnoses, procedures, labs, demographics
SEQ_SCALE = 10.0


class PredictorError(ValueError):
    pass


class CheckpointError(PredictorError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 0  # 0 means 4 * d_model
    threshold: float = 0.5

    def __post_init__(self):
        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise PredictorError("d_model must be a positive multiple of n_heads")
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if not (0.0 < self.threshold < 1.0):
            raise PredictorError("threshold must be in (0,1)")


def demographics_dim(vocab: Vocabularies) -> int:
    # age scaled + gender one-hot (2) + ethnicity one-hot + admission_seq scaled
    return 1 + 2 + vocab.n_ethnicities + 1


def encode_record(record: HospitalizationRecord, vocab: Vocabularies) -> dict[str, np.ndarray]:
    """State features: four fixed-layout group vectors."""
    diag = np.zeros(vocab.n_diagnoses)
    diag[list(record.diagnoses)] = 1.0
    proc = np.zeros(vocab.n_procedures)
    for p in record.procedures:  # multiset: multiplicity kept as counts
        proc[p] += 1.0
    labs = np.zeros(vocab.n_lab_codes)
    for code, flag in record.lab_events:
        labs[code] = 1.0 if flag == 1 else -1.0
    demo = np.zeros(demographics_dim(vocab))
    demo[0] = (record.demographics.age - MIN_AGE) / float(MAX_AGE - MIN_AGE)
    demo[1 + (0 if record.demographics.gender == "F" else 1)] = 1.0
    demo[3 + record.demographics.ethnicity] = 1.0
    demo[-1] = min(record.demographics.admission_seq, SEQ_SCALE) / SEQ_SCALE
    return {"diagnoses": diag, "procedures": proc, "labs": labs, "demographics": demo}


def encode_batch(records, vocab: Vocabularies) -> dict[str, np.ndarray]:
    encoded = [encode_record(r, vocab) for r in records]
    return {
        key: np.stack([e[key] for e in encoded]) if encoded else np.zeros((0, 1))
        for key in ("diagnoses", "procedures", "labs", "demographics")
    }


GROUP_ORDER = ("diagnoses", "procedures", "labs", "demographics")


@dataclass
class ModelParams:
    """Named parameter tensors; values stay float32-representable so
    checkpoints round-trip bit-exactly."""

    config: ModelConfig
    n_medications: int
    group_dims: dict[str, int]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            n_medications=self.n_medications,
            group_dims=dict(self.group_dims),
            tensors={k: v.copy() for k, v in self.tensors.items()},
        )

    def allclose(self, other: "ModelParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def _f32(arr: np.ndarray) -> np.ndarray:
    # round through float32: float64 math, float32-exact storage
    return arr.astype(np.float32).astype(np.float64)


def init_params(vocab: Vocabularies, config: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    d = config.d_model
    dims = {
        "diagnoses": vocab.n_diagnoses,
        "procedures": vocab.n_procedures,
        "labs": vocab.n_lab_codes,
        "demographics": demographics_dim(vocab),
    }

    def normal(*shape, scale):
        return _f32(rng.normal(0.0, scale, size=shape))

    t: dict[str, np.ndarray] = {}
    for g in GROUP_ORDER:
        t[f"proj_{g}"] = normal(dims[g], d, scale=1.0 / np.sqrt(dims[g]))
    t["pos"] = normal(N_GROUPS, d, scale=0.01)
    for name in ("attn_q", "attn_k", "attn_v", "attn_o"):
        t[name] = normal(d, d, scale=0.02)
    t["ln1_gain"] = np.ones(d)
    t["ln1_bias"] = np.zeros(d)
    t["ff_w1"] = normal(d, config.d_ff, scale=0.02)
    t["ff_b1"] = np.zeros(config.d_ff)
    t["ff_w2"] = normal(config.d_ff, d, scale=0.02)
    t["ff_b2"] = np.zeros(d)
    t["ln2_gain"] = np.ones(d)
    t["ln2_bias"] = np.zeros(d)
    t["head_w"] = normal(N_GROUPS * d, vocab.n_medications, scale=0.02)
    t["head_b"] = np.zeros(vocab.n_medications)
    return ModelParams(config=config, n_medications=vocab.n_medications, group_dims=dims, tensors=t)


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return (xc / (var + LN_EPS).sqrt()) * gain + bias


def forward(params: ModelParams, batch: dict[str, np.ndarray], leaves: dict[str, Tensor] | None = None) -> Tensor:
    """Probabilities in (0,1)^(batch, n_medications).

    Pass `leaves` (parameter-name -> leaf Tensor) inside an active Tape to
    make the output differentiable; otherwise parameters are read directly.
    """
    if leaves is None:
        leaves = {k: Tensor(v) for k, v in params.tensors.items()}
    p = leaves
    cfg = params.config
    d, h = cfg.d_model, cfg.n_heads
    dh = d // h

    n_batch = batch["diagnoses"].shape[0]
    for g in GROUP_ORDER:
        if batch[g].shape[1] != params.group_dims[g]:
            raise PredictorError(
                f"group '{g}' has dim {batch[g].shape[1]}, expected {params.group_dims[g]}"
            )

    tokens = Tensor.concat(
        [
            (Tensor(batch[g]) @ p[f"proj_{g}"] + p["pos"][i]).reshape(n_batch, 1, d)
            for i, g in enumerate(GROUP_ORDER)
        ],
        axis=1,
    )  # (b, 4, d)

    q = (tokens @ p["attn_q"]).reshape(n_batch, N_GROUPS, h, dh).transpose(0, 2, 1, 3)
    k = (tokens @ p["attn_k"]).reshape(n_batch, N_GROUPS, h, dh).transpose(0, 2, 1, 3)
    v = (tokens @ p["attn_v"]).reshape(n_batch, N_GROUPS, h, dh).transpose(0, 2, 1, 3)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    attn = scores.softmax(axis=-1) @ v  # (b, h, 4, dh)
    attn = attn.transpose(0, 2, 1, 3).reshape(n_batch, N_GROUPS, d) @ p["attn_o"]

    x = _layer_norm(tokens + attn, p["ln1_gain"], p["ln1_bias"])
    ff = ((x @ p["ff_w1"] + p["ff_b1"]).gelu() @ p["ff_w2"]) + p["ff_b2"]
    x = _layer_norm(x + ff, p["ln2_gain"], p["ln2_bias"])

    logits = x.reshape(n_batch, N_GROUPS * d) @ p["head_w"] + p["head_b"]
    return logits.sigmoid()


def bce_loss(probabilities: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over samples and labels."""
    if probabilities.shape != targets.shape:
        raise PredictorError(
            f"probabilities shape {probabilities.shape} != targets shape {targets.shape}"
        )
    y = np.asarray(targets, dtype=np.float64)
    p = probabilities.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    losses = -(Tensor(y) * p.log() + Tensor(1.0 - y) * (1.0 - p).log())
    return losses.mean()


def predict_set(probabilities: np.ndarray, n_medications: int, threshold: float = 0.5) -> MedicationSet:
    """Threshold decode; an empty result falls back to the single argmax so
    downstream retrieval always sees a nonempty action."""
    probs = np.asarray(probabilities, dtype=np.float64)
    idx = np.flatnonzero(probs >= threshold)
    if idx.size == 0:
        idx = np.array([int(np.argmax(probs))])
    return MedicationSet(n=n_medications, indices=tuple(int(i) for i in idx))


def predict_sets(probabilities: np.ndarray, n_medications: int, threshold: float = 0.5) -> list[MedicationSet]:
    return [predict_set(row, n_medications, threshold) for row in probabilities]


def targets_matrix(records, n_medications: int) -> np.ndarray:
    return np.stack([r.medications.to_bits().astype(np.float64) for r in records])


# --- checkpoints --------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "d_model": params.config.d_model,
            "n_heads": params.config.n_heads,
            "d_ff": params.config.d_ff,
            "threshold": params.config.threshold,
        },
        "n_medications": params.n_medications,
        "group_dims": params.group_dims,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for v in params.tensors.values():
            f.write(v.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        header = f.readline()
        blob = f.read()
    try:
        manifest = json.loads(header)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"bad checkpoint manifest: {e.msg}") from e
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    cfg = ModelConfig(**manifest["config"])
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = blob[offset : offset + 4 * n]
        if len(chunk) != 4 * n:
            raise CheckpointError(f"checkpoint truncated at tensor '{entry['name']}'")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        offset += 4 * n
    if offset != len(blob):
        raise CheckpointError("checkpoint has trailing bytes")
    return ModelParams(
        config=cfg,
        n_medications=int(manifest["n_medications"]),
        group_dims={k: int(v) for k, v in manifest["group_dims"].items()},
        tensors=tensors,
    )


def checkpoint_digest(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()
