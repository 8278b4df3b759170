"""Two-phase training loop.

Phase one is plain supervised BCE. When a batch's mean reward (recorded stay
minus counterfactual ELOS of the predicted medication sets) clears the gate
threshold, the batch enters phase two: one update with the decayed loss, then
repeated perturbed-objective updates with state recomputed after every step,
until the batch mean reward turns negative or a safety cap is hit.

The perturbation is a scalar read off the retrieval outputs, outside the
differentiation tape; the perturbed objective therefore backpropagates only
through its supervised term.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .cohort import Cohort
from .predictor import (
    ModelConfig,
    ModelParams,
    bce_loss,
    encode_batch,
    forward,
    init_params,
    predict_sets,
    targets_matrix,
)
from .retrieval import (
    ZERO_REWARD,
    BatchReward,
    RetrievalConfig,
    RetrievalIndex,
    batch_reward,
    build_index,
)


class TrainerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.9            # loss decay inside the gate
    delta: float = 0.2          # gate threshold on batch mean reward, days
    gamma: float = 0.5          # perturbation confidence
    epsilon_blend: float = 0.2  # objective blend factor
    learning_rate: float = 1e-3
    batch_size: int = 128       # reference setting uses 512
    max_epochs: int = 50
    early_stop_start: int = 5   # 1-based epoch at which early stopping may trigger
    patience: int = 3
    max_inner_steps: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise TrainerError("lam must be in [0,1]")
        if not (0.0 <= self.epsilon_blend <= 1.0):
            raise TrainerError("epsilon_blend must be in [0,1]")
        if self.gamma < 0:
            raise TrainerError("gamma must be >= 0")
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.max_inner_steps < 0:
            raise TrainerError("batch_size, max_epochs >= 1; max_inner_steps >= 0")


PERTURBATION_FLOOR = 1e-6


def gated_loss(l_bce: float, h_b: float, config: TrainConfig) -> tuple[float, bool]:
    """Decayed loss when the batch reward clears the gate."""
    if l_bce < 0:
        raise TrainerError("l_bce must be >= 0")
    gate = h_b >= config.delta
    return (config.lam * l_bce if gate else l_bce), gate


def perturbation(h_b: float, sum_elos: float, gamma: float) -> float:
    """Logarithmic perturbation; argument floored so negative mid-step
    rewards cannot leave the log's domain."""
    if sum_elos <= 0:
        raise TrainerError(f"sum_elos must be > 0, got {sum_elos}")
    return math.log(max(PERTURBATION_FLOOR, 1.0 + gamma * (h_b / sum_elos)))


def perturbed_objective(l: float, p_rl: float, config: TrainConfig) -> float:
    return config.epsilon_blend * (1.0 - config.lam) * l + (1.0 - config.epsilon_blend) * p_rl


# --- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """In-place Adam update; parameters stay float32-representable."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainerError(f"non-finite gradient in tensor '{name}'")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, theta in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(theta)
            state.m[name] = m
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g * g
        theta[...] = theta - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        theta[...] = theta.astype(np.float32).astype(np.float64)


# --- history -------------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_hb", "val_elos",
                   "gate_entries", "inner_steps")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_hb: float
    val_elos: float
    gate_entries: int
    inner_steps: int


@dataclass
class TrainHistory:
    rows: list[EpochStats] = field(default_factory=list)
    param_digests: list[str] = field(default_factory=list)
    best_epoch: int = 0
    early_stop_epoch: int | None = None


def write_history_csv(history: TrainHistory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_COLUMNS)
        for r in history.rows:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_hb),
                        repr(r.val_elos), r.gate_entries, r.inner_steps])


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    for name in params.names():
        h.update(name.encode())
        h.update(params.tensors[name].astype("<f4").tobytes())
    return h.hexdigest()


@dataclass
class TrainResult:
    params: ModelParams           # best-validation checkpoint
    final_params: ModelParams     # parameters at the last executed epoch
    history: TrainHistory


# --- core loop ------------------------------------------------------------------

def _grads_of(tape: Tape, loss: Tensor, leaves: dict[str, Tensor],
              scale: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of scale * loss; the scale rides in as the backward seed so
    no node has to be added after the tape is closed."""
    for t in leaves.values():
        t.grad = None
    tape.backward(loss, seed=scale)
    return {k: t.grad for k, t in leaves.items() if t.grad is not None}


def _batch_state(params, batch, targets, records, index, retr_cfg, threshold):
    """Forward + loss on a fresh tape, plus predicted sets and batch reward."""
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.tensors.items()}
    with Tape() as tape:
        probs = forward(params, batch, leaves)
        loss = bce_loss(probs, targets)
    br = None
    if index is not None:
        alphas = predict_sets(probs.value, params.n_medications, threshold)
        br = batch_reward(records, alphas, index, retr_cfg)
    return tape, leaves, loss, br


def _evaluate_split(params, cohort, index, retr_cfg, threshold):
    """Validation loss / reward stats with the evaluation-time pool policy."""
    if cohort.n_records == 0:
        return 0.0, 0.0, 0.0
    batch = encode_batch(cohort.records, cohort.vocabularies)
    targets = targets_matrix(cohort.records, cohort.vocabularies.n_medications)
    probs = forward(params, batch)
    loss = float(bce_loss(probs, targets).value)
    eval_cfg = RetrievalConfig(k=retr_cfg.k, phi=retr_cfg.phi, age_window=retr_cfg.age_window,
                               empty_pool_policy=ZERO_REWARD, elos_reducer=retr_cfg.elos_reducer)
    alphas = predict_sets(probs.value, params.n_medications, threshold)
    br = batch_reward(cohort.records, alphas, index, eval_cfg)
    return loss, br.h_b, br.mean_elos


def _train_batch(params: ModelParams, adam: AdamState, index: RetrievalIndex | None,
                 batch, targets, batch_records, train_cfg: TrainConfig,
                 retr_cfg: RetrievalConfig, threshold: float, delta: float) -> tuple[float, bool, int]:
    """One batch of the two-phase loop; returns (bce, gate fired, inner steps)."""
    eps_lam = train_cfg.epsilon_blend * (1.0 - train_cfg.lam)
    tape, leaves, loss, br = _batch_state(params, batch, targets, batch_records,
                                          index, retr_cfg, threshold)
    bce = float(loss.value)
    h_b = br.h_b if (br is not None and not br.all_excluded) else -math.inf
    if h_b < delta:
        grads = _grads_of(tape, loss, leaves)
        adam_step(params, grads, adam, train_cfg.learning_rate)
        return bce, False, 0

    grads = _grads_of(tape, loss, leaves, scale=train_cfg.lam)
    adam_step(params, grads, adam, train_cfg.learning_rate)
    # therapeutic inner loop: recompute predictions, retrieval, and loss
    # after every update; exit once the batch mean reward turns negative.
    # The perturbation term is constant under the tape, so the blended
    # objective's gradient is the supervised gradient scaled by eps*(1-lam).
    inner = 0
    for _ in range(train_cfg.max_inner_steps):
        tape, leaves, loss, br = _batch_state(params, batch, targets, batch_records,
                                              index, retr_cfg, threshold)
        if br.all_excluded or br.h_b < 0:
            break
        grads = _grads_of(tape, loss, leaves, scale=eps_lam)
        adam_step(params, grads, adam, train_cfg.learning_rate)
        inner += 1
    return bce, True, inner


def train(train_cohort: Cohort, val_cohort: Cohort, train_cfg: TrainConfig,
          model_cfg: ModelConfig | None = None, retr_cfg: RetrievalConfig | None = None,
          baseline: bool = False) -> TrainResult:
    """Full two-phase run; `baseline` disables the gate (threshold = inf)."""
    if train_cohort.n_records == 0:
        raise TrainerError("empty training split")
    model_cfg = model_cfg or ModelConfig()
    retr_cfg = retr_cfg or RetrievalConfig()
    delta = math.inf if baseline else train_cfg.delta

    vocab = train_cohort.vocabularies
    params = init_params(vocab, model_cfg, seed=train_cfg.seed)
    adam = AdamState()
    # reward pool comes from the training split only: no label leakage
    index = build_index(train_cohort, "train")
    threshold = model_cfg.threshold

    records = list(train_cohort.records)
    all_batch = encode_batch(records, vocab)
    targets_all = targets_matrix(records, vocab.n_medications)

    history = TrainHistory()
    best_val = math.inf
    best_params = params.copy()
    best_epoch = 0
    since_improve = 0
    shuffle_rng = np.random.default_rng(train_cfg.seed)

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(records))
        gate_entries = 0
        inner_steps = 0
        batch_losses: list[float] = []

        for start in range(0, len(records), train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            bce, gate, inner = _train_batch(
                params, adam, None if baseline else index,
                {k: v[idx] for k, v in all_batch.items()}, targets_all[idx],
                [records[i] for i in idx], train_cfg, retr_cfg, threshold, delta)
            batch_losses.append(bce)
            gate_entries += int(gate)
            inner_steps += inner

        val_loss, val_hb, val_elos = _evaluate_split(params, val_cohort, index, retr_cfg, threshold)
        history.rows.append(EpochStats(
            epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            val_loss=val_loss, val_hb=val_hb, val_elos=val_elos,
            gate_entries=gate_entries, inner_steps=inner_steps,
        ))
        history.param_digests.append(params_digest(params))

        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch
            since_improve = 0
        else:
            since_improve += 1
        if epoch >= train_cfg.early_stop_start and since_improve >= train_cfg.patience:
            history.early_stop_epoch = epoch
            break

    history.best_epoch = best_epoch
    return TrainResult(params=best_params, final_params=params, history=history)


def train_supervised(train_cohort: Cohort, val_cohort: Cohort, train_cfg: TrainConfig,
                     model_cfg: ModelConfig | None = None,
                     retr_cfg: RetrievalConfig | None = None) -> TrainResult:
    """Plain supervised reference loop, written independently of the gated
    trainer so gate-off equivalence is a real cross-check."""
    if train_cohort.n_records == 0:
        raise TrainerError("empty training split")
    model_cfg = model_cfg or ModelConfig()
    retr_cfg = retr_cfg or RetrievalConfig()
    vocab = train_cohort.vocabularies
    params = init_params(vocab, model_cfg, seed=train_cfg.seed)
    adam = AdamState()
    index = build_index(train_cohort, "train")

    records = list(train_cohort.records)
    all_batch = encode_batch(records, vocab)
    targets_all = targets_matrix(records, vocab.n_medications)

    history = TrainHistory()
    best_val = math.inf
    best_params = params.copy()
    best_epoch = 0
    since_improve = 0
    shuffle_rng = np.random.default_rng(train_cfg.seed)

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(records))
        losses = []
        for start in range(0, len(records), train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            leaves = {k: Tensor(v, requires_grad=True) for k, v in params.tensors.items()}
            with Tape() as tape:
                probs = forward(params, {k: v[idx] for k, v in all_batch.items()}, leaves)
                loss = bce_loss(probs, targets_all[idx])
            losses.append(float(loss.value))
            grads = _grads_of(tape, loss, leaves)
            adam_step(params, grads, adam, train_cfg.learning_rate)

        val_loss, val_hb, val_elos = _evaluate_split(params, val_cohort, index, retr_cfg,
                                                     model_cfg.threshold)
        history.rows.append(EpochStats(
            epoch=epoch, train_loss=float(np.mean(losses)), val_loss=val_loss,
            val_hb=val_hb, val_elos=val_elos, gate_entries=0, inner_steps=0,
        ))
        history.param_digests.append(params_digest(params))

        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch
            since_improve = 0
        else:
            since_improve += 1
        if epoch >= train_cfg.early_stop_start and since_improve >= train_cfg.patience:
            history.early_stop_epoch = epoch
            break

    history.best_epoch = best_epoch
    return TrainResult(params=best_params, final_params=params, history=history)
