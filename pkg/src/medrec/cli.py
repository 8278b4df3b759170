"""Command-line entry point: gen, split, train, eval, analyze, query, serve.

Every command accepts --config pointing at a flat JSON key-value file; any
flag given on the command line overrides the file. Exit codes: 0 success,
1 domain error (single-line diagnostic on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .analysis import ClusterError, EmbedError, GraphError, ReportError, ThemeError, emit_report, run_analysis
from .cohort import (
    CohortError,
    GeneratorConfig,
    MedicationSet,
    generate_cohort,
    read_cohort,
    split_cohort,
    write_cohort,
)
from .metrics import MetricError, evaluate_probabilities, read_predictions, write_predictions
from .predictor import CheckpointError, PredictorError, ModelConfig, encode_batch, forward, load_checkpoint, save_checkpoint
from .retrieval import (
    ZERO_REWARD,
    RetrievalConfig,
    RetrievalError,
    build_index,
    query_counterfactual,
)
from .trainer import TrainConfig, TrainerError, train, write_history_csv

log = logging.getLogger("medrec")

DOMAIN_ERRORS = (
    CohortError,
    RetrievalError,
    TrainerError,
    MetricError,
    PredictorError,
    CheckpointError,
    GraphError,
    EmbedError,
    ClusterError,
    ThemeError,
    ReportError,
    OSError,
    json.JSONDecodeError,
)


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    for key, value in data.items():
        if not isinstance(value, (str, int, float, bool)) and value is not None:
            raise UsageError(f"config key {key!r} must be a flat scalar")
    return data


def _pick(args, config: dict, key: str, default=None):
    """CLI flag beats config file beats default."""
    cli = getattr(args, key, None)
    if cli is not None:
        return cli
    if key in config and config[key] is not None:
        return config[key]
    return default


def _require(args, config, key, flag):
    value = _pick(args, config, key)
    if value is None:
        raise UsageError(f"missing required {flag}")
    return value


def _parse_pair(text, flag, cast):
    parts = str(text).split(",")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError:
        raise UsageError(f"cannot parse {flag}={text!r}")


# generator knobs accepted as flags; any GeneratorConfig field works via --config
_GEN_FLAGS = ("q_miss", "q_extra", "ddi_density", "procedure_skew",
              "n_procedures", "n_medications", "n_diagnoses", "n_lab_codes")
_GEN_FIELDS = {f.name for f in dataclasses.fields(GeneratorConfig)}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def cmd_gen(args) -> int:
    config = _load_config(args.config)
    out = _require(args, config, "out", "--out")
    kwargs = {k: v for k, v in config.items() if k in _GEN_FIELDS}
    for key in _GEN_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            kwargs[key] = value
    if _pick(args, config, "patients") is not None:
        kwargs["n_patients"] = int(_pick(args, config, "patients"))
    kwargs["seed"] = int(_pick(args, config, "seed", kwargs.get("seed", 0)))
    cohort = generate_cohort(GeneratorConfig(**kwargs))
    write_cohort(cohort, out)
    print(f"wrote {cohort.n_records} records for {kwargs.get('n_patients', 1000)} patients to {out}")
    return 0


def cmd_split(args) -> int:
    config = _load_config(args.config)
    in_path = _require(args, config, "in_path", "--in")
    prefix = _require(args, config, "out_prefix", "--out-prefix")
    ratios = _parse_pair(_pick(args, config, "ratios", "0.7,0.15,0.15"), "--ratios", float)
    if len(ratios) != 3:
        raise UsageError("--ratios needs three comma-separated numbers")
    seed = int(_pick(args, config, "seed", 0))
    cohort = read_cohort(in_path)
    parts = split_cohort(cohort, ratios, seed=seed)
    for name, part in zip(("train", "val", "test"), parts):
        write_cohort(part, f"{prefix}.{name}.jsonl")
        print(f"{name}: {part.n_records} records")
    return 0


def _retrieval_config(args, config) -> RetrievalConfig:
    kwargs = {}
    for key in ("k", "phi", "age_window"):
        value = _pick(args, config, key)
        if value is not None:
            kwargs[key] = value
    for key in ("empty_pool_policy", "elos_reducer"):
        if key in config:
            kwargs[key] = config[key]
    return RetrievalConfig(**kwargs)


def cmd_train(args) -> int:
    config = _load_config(args.config)
    train_path = _require(args, config, "train", "--train")
    val_path = _require(args, config, "val", "--val")
    out_ckpt = _require(args, config, "out_ckpt", "--out-ckpt")
    kwargs = {k: _pick(args, config, k) for k in _TRAIN_FIELDS}
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    train_cfg = TrainConfig(**kwargs)
    model_kwargs = {}
    for key in ("d_model", "n_heads", "threshold"):
        value = _pick(args, config, key)
        if value is not None:
            model_kwargs[key] = value
    model_cfg = ModelConfig(**model_kwargs)
    baseline = bool(_pick(args, config, "baseline", False))

    train_cohort = read_cohort(train_path)
    val_cohort = read_cohort(val_path)
    result = train(train_cohort, val_cohort, train_cfg, model_cfg=model_cfg,
                   retr_cfg=_retrieval_config(args, config), baseline=baseline)
    save_checkpoint(result.params, out_ckpt)
    history_path = _pick(args, config, "history")
    if history_path:
        write_history_csv(result.history, history_path)
    best = result.history.best_epoch
    print(f"best_epoch={best} val_loss={result.history.rows[best - 1].val_loss!r} checkpoint={out_ckpt}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    ckpt_path = _require(args, config, "checkpoint", "--checkpoint")
    cohort_path = _require(args, config, "cohort", "--cohort")
    index_path = _pick(args, config, "index_cohort", cohort_path)

    params = load_checkpoint(ckpt_path)
    cohort = read_cohort(cohort_path)
    index_cohort = cohort if index_path == cohort_path else read_cohort(index_path)
    index = build_index(index_cohort, split_tag=os.path.basename(str(index_path)))
    retr_cfg = _retrieval_config(args, config)

    if params.n_medications != cohort.vocabularies.n_medications:
        raise MetricError("checkpoint and cohort medication vocabularies differ")
    batch = encode_batch(cohort.records, cohort.vocabularies)
    probs = forward(params, batch).value
    report, preds = evaluate_probabilities(probs, cohort, index, retr_cfg,
                                           params.config.threshold)
    text = report.to_flat_text()
    out = _pick(args, config, "out")
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    preds_out = _pick(args, config, "predictions_out")
    if preds_out:
        write_predictions(cohort.records, preds, preds_out)
    return 0


def cmd_analyze(args) -> int:
    config = _load_config(args.config)
    preds_path = _require(args, config, "predictions", "--predictions")
    cohort_path = _require(args, config, "cohort", "--cohort")
    out_dir = _require(args, config, "out_dir", "--out-dir")
    k_range = _parse_pair(_pick(args, config, "k_range", "2,12"), "--k-range", int)
    if len(k_range) != 2:
        raise UsageError("--k-range needs two comma-separated integers")
    seed = int(_pick(args, config, "seed", 0))
    iterations = int(_pick(args, config, "iterations", 30))

    cohort = read_cohort(cohort_path)
    by_event = read_predictions(preds_path, cohort.vocabularies.n_medications)
    med_sets = []
    for record in cohort.records:
        if record.event_id not in by_event:
            raise MetricError(f"predictions file lacks event {record.event_id}")
        med_sets.append(by_event[record.event_id])
    bundle = run_analysis(cohort, med_sets, k_range=k_range, seed=seed, iterations=iterations)
    paths = emit_report(bundle, out_dir)
    print(f"k={bundle.clusters.chosen_k} files={len(paths)} out_dir={out_dir}")
    return 0


def cmd_query(args) -> int:
    config = _load_config(args.config)
    index_path = _require(args, config, "index_cohort", "--index-cohort")
    state_path = _require(args, config, "state_file", "--state-file")

    with open(state_path, encoding="utf-8") as f:
        state = json.load(f)
    if not isinstance(state, dict):
        raise UsageError("state file must hold a JSON object")
    meds_arg = _pick(args, config, "meds")
    if meds_arg is not None:
        med_indices = _parse_pair(meds_arg, "--meds", int)
    elif isinstance(state.get("medications"), list):
        med_indices = tuple(int(m) for m in state["medications"])
    else:
        raise UsageError("no medication set: pass --meds or a 'medications' field")
    procedures = state.get("procedures")
    age = state.get("demographics", {}).get("age", state.get("age"))
    if not isinstance(procedures, list) or age is None:
        raise UsageError("state file needs 'procedures' and an age")

    cohort = read_cohort(index_path)
    index = build_index(cohort, split_tag=os.path.basename(str(index_path)))
    retr_cfg = _retrieval_config(args, config)
    retr_cfg = dataclasses.replace(retr_cfg, empty_pool_policy=ZERO_REWARD)
    alpha = MedicationSet(n=cohort.vocabularies.n_medications, indices=med_indices)
    result = query_counterfactual(
        index, tuple(int(p) for p in procedures), int(age), alpha, retr_cfg,
        recorded_los=state.get("los"),
    )
    print(json.dumps(result, sort_keys=True, indent=2))
    return 0


def cmd_serve(args) -> int:
    config = _load_config(args.config)
    ckpt_path = _require(args, config, "checkpoint", "--checkpoint")
    index_path = _require(args, config, "index_cohort", "--index-cohort")
    port = int(_pick(args, config, "port", 8000))
    ui_dir = _pick(args, config, "ui_dir")

    # imported lazily so the other commands stay light
    import uvicorn

    from .service import build_app, load_state

    state = load_state(ckpt_path, index_path)
    app = build_app(state, ui_dir=ui_dir)
    level = os.environ.get("MEDREC_LOG_LEVEL", "warning").lower()
    uvicorn.run(app, host="127.0.0.1", port=port, log_level=level)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medrec",
                                     description="medication recommendation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(func=func)
        p.add_argument("--config", help="flat JSON key-value file; flags override it")
        p.add_argument("--seed", type=int)
        return p

    p = add("gen", cmd_gen, "generate a synthetic cohort")
    p.add_argument("--patients", type=int)
    p.add_argument("--out")
    p.add_argument("--q-miss", dest="q_miss", type=float)
    p.add_argument("--q-extra", dest="q_extra", type=float)
    p.add_argument("--ddi-density", dest="ddi_density", type=float)
    p.add_argument("--procedure-skew", dest="procedure_skew", type=float)
    p.add_argument("--n-procedures", dest="n_procedures", type=int)
    p.add_argument("--n-medications", dest="n_medications", type=int)
    p.add_argument("--n-diagnoses", dest="n_diagnoses", type=int)
    p.add_argument("--n-lab-codes", dest="n_lab_codes", type=int)

    p = add("split", cmd_split, "split a cohort into train/val/test by patient")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--ratios")
    p.add_argument("--out-prefix", dest="out_prefix")

    p = add("train", cmd_train, "run the two-phase training loop")
    p.add_argument("--train", dest="train")
    p.add_argument("--val", dest="val")
    p.add_argument("--out-ckpt", dest="out_ckpt")
    p.add_argument("--history")
    p.add_argument("--baseline", action="store_true", default=None,
                   help="disable the reward gate (supervised only)")
    p.add_argument("--lam", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon-blend", dest="epsilon_blend", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--early-stop-start", dest="early_stop_start", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-inner-steps", dest="max_inner_steps", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--phi", type=float)
    p.add_argument("--age-window", dest="age_window", type=int)

    p = add("eval", cmd_eval, "score a checkpoint on a cohort")
    p.add_argument("--checkpoint")
    p.add_argument("--cohort")
    p.add_argument("--index-cohort", dest="index_cohort")
    p.add_argument("--out")
    p.add_argument("--predictions-out", dest="predictions_out")
    p.add_argument("--k", type=int)
    p.add_argument("--phi", type=float)
    p.add_argument("--age-window", dest="age_window", type=int)

    p = add("analyze", cmd_analyze, "cluster and theme predicted medication sets")
    p.add_argument("--predictions")
    p.add_argument("--cohort")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--k-range", dest="k_range")
    p.add_argument("--iterations", type=int)

    p = add("query", cmd_query, "one-shot counterfactual lookup")
    p.add_argument("--index-cohort", dest="index_cohort")
    p.add_argument("--state-file", dest="state_file")
    p.add_argument("--meds")
    p.add_argument("--k", type=int)
    p.add_argument("--phi", type=float)
    p.add_argument("--age-window", dest="age_window", type=int)

    p = add("serve", cmd_serve, "serve the what-if HTTP API")
    p.add_argument("--checkpoint")
    p.add_argument("--index-cohort", dest="index_cohort")
    p.add_argument("--port", type=int)
    p.add_argument("--ui-dir", dest="ui_dir", help="static SPA directory to mount at /")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MEDREC_LOG_LEVEL", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        sys.stderr.write(parser.format_usage())
        return 2
    except DOMAIN_ERRORS as exc:
        message = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {message}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
