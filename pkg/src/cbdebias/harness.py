"""Experiment orchestration: in-dataset 5-fold and cross-dataset runs,
bias audits over prediction files, and report writing.

Every run is a pure function of its ExperimentSpec: all randomness flows
from the run-level seed via derive_seed(seed, stage_tag), artifacts are
written with stable ordering, and reruns produce byte-identical files.
Each reported mean is the arithmetic mean of persisted per-fold values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import train as train_mod
from .corpus import (
    DEFAULT_MAX_TOKENS,
    Session,
    aggregate_and_clean,
    load_dataset,
    split_folds,
    split_train_val,
)
from .encode import EmbeddingSet, EncoderConfig, encode_corpus, export_embeddings, import_embeddings
from .errors import DataError, PipelineError, UsageError
from .lexicon import DEFAULT_MASK_TOKEN, Lexicon, find_matches, load_lexicon
from .metrics import (
    BiasReport,
    bias_report,
    bias_report_to_dict,
    load_predictions_csv,
    save_predictions_csv,
)
from .model import init_params, load_checkpoint, save_checkpoint
from .seeding import derive_seed
from .train import TrainConfig, predict_records

METRIC_FIELDS = ("f1", "recall", "precision", "fped", "fned")


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: str
    lexicon: str
    out_dir: str
    target_dataset: str | None = None
    embeddings_path: str | None = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: int = 5
    seed: int = 0
    max_tokens: int = DEFAULT_MAX_TOKENS
    mask_token: str = DEFAULT_MASK_TOKEN
    top_k: int = 10
    tradeoff_weight: float = 1.0

    def is_cross_dataset(self) -> bool:
        return (self.target_dataset is not None
                and self.target_dataset != self.dataset)


@dataclass
class ExperimentReport:
    mode: str
    spec: dict
    fold_rows: list[dict]
    mean_row: dict
    top_bias_words_before: list[dict]
    top_bias_words_after: list[dict]
    seeds: dict


def _spec_echo(spec: ExperimentSpec) -> dict:
    enc = spec.encoder
    tr = spec.train
    return {
        "dataset": str(spec.dataset),
        "target_dataset": str(spec.target_dataset) if spec.target_dataset else None,
        "lexicon": str(spec.lexicon),
        "embeddings_path": str(spec.embeddings_path) if spec.embeddings_path else None,
        "encoder": {"dim": enc.dim, "layers": enc.layers,
                    "vocab_buckets": enc.vocab_buckets,
                    "ngram_range": list(enc.ngram_range), "seed": enc.seed,
                    "hash_name": enc.hash_name},
        "train": {"epochs": tr.epochs, "batch_size": tr.batch_size, "lr": tr.lr,
                  "beta": tr.beta, "lambda_a": tr.lambda_a,
                  "threshold": tr.threshold, "layer_mode": tr.layer_mode,
                  "layer": tr.layer, "seed": tr.seed, "hidden": tr.hidden,
                  "task_input": tr.task_input,
                  "decision_threshold": tr.decision_threshold},
        "folds": spec.folds,
        "seed": spec.seed,
        "max_tokens": spec.max_tokens,
        "mask_token": spec.mask_token,
        "top_k": spec.top_k,
        "tradeoff_weight": spec.tradeoff_weight,
    }


def _prepare(sessions: list[Session], lexicon: Lexicon, max_tokens: int,
             ) -> tuple[list[Session], dict[str, int], dict[str, tuple[str, ...]]]:
    aggregated = [aggregate_and_clean(s, max_tokens) for s in sessions]
    labels = {s.id: s.label for s in aggregated}
    swears = {
        s.id: tuple(sorted({m.phrase for m in find_matches(s.aggregated_text or "",
                                                           lexicon)}))
        for s in aggregated
    }
    return aggregated, labels, swears


def _mean_dict(rows: Sequence[dict]) -> dict:
    return {k: sum(r[k] for r in rows) / len(rows) for k in METRIC_FIELDS}


def _top_rows(report: BiasReport, top_k: int) -> list[dict]:
    rows = []
    for phrase, b in report.per_word.items():
        if b.fprd is None:
            continue
        rows.append({"sw": phrase, "fprd": b.fprd, "fnrd": b.fnrd,
                     "support": b.support_pos + b.support_neg})
        if len(rows) >= top_k:
            break
    return rows


def _write_json(path: Path, payload: object) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


REPORT_FORMATS = ("json", "csv", "markdown")
_FORMAT_SUFFIX = {"json": "report.json", "csv": "report.csv",
                  "markdown": "report.md"}


def run_experiment(spec: ExperimentSpec,
                   formats: Sequence[str] = REPORT_FORMATS) -> ExperimentReport:
    """Run the full pipeline and persist every intermediate artifact.

    In-dataset (no target): k independent 80/20 splits with validation
    carved from the training portion; reports per-fold and mean metrics.
    Cross-dataset: train on the source (validation carved from the source,
    never the target), evaluate once on the whole target.
    """
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fmt in formats:
        if fmt not in REPORT_FORMATS:
            raise UsageError(f"unknown report format: {fmt!r}")
    stage = "setup"
    try:
        lexicon = load_lexicon(spec.lexicon)
        sessions = load_dataset(spec.dataset)
        source, labels, swears = _prepare(sessions, lexicon, spec.max_tokens)

        stage = "encode"
        encoder = replace(spec.encoder, seed=derive_seed(spec.seed, "encoder"))
        if spec.embeddings_path:
            embeddings = import_embeddings(spec.embeddings_path)
        else:
            embeddings = encode_corpus(source, lexicon, encoder, spec.mask_token)
            export_embeddings(embeddings, out_dir / "embeddings.jsonl")

        if spec.is_cross_dataset():
            stage = "cross-dataset"
            report = _run_cross(spec, out_dir, lexicon, source, labels, swears,
                                embeddings, encoder)
        else:
            stage = "in-dataset"
            report = _run_in_dataset(spec, out_dir, lexicon, source, labels,
                                     swears, embeddings)
    except PipelineError as exc:
        raise type(exc)(f"experiment failed at stage {stage!r}: {exc}") from exc

    for fmt in formats:
        write_report(report, fmt, out_dir / _FORMAT_SUFFIX[fmt])
    return report


def _train_and_eval_fold(spec: ExperimentSpec, fold_dir: Path, fold_name: str,
                         embeddings: EmbeddingSet,
                         train_ids: Sequence[str], val_ids: Sequence[str],
                         test_ids: Sequence[str], labels: dict,
                         swears: dict, train_seed: int,
                         ) -> tuple[dict, list, list]:
    """Train one fold, persist its artifacts, and return the metrics row
    plus the test predictions of the untrained (before) and trained
    (after) classifier."""
    fold_dir.mkdir(parents=True, exist_ok=True)
    cfg = replace(spec.train, seed=train_seed)
    result = train_mod.train_joint(embeddings, train_ids, val_ids, labels,
                                   swears, cfg)
    train_mod.write_trace_jsonl(result.trace, fold_dir / "trace.jsonl")
    if result.final_results:
        _write_layer_table(result.final_results, fold_dir / "layer_table.csv")

    row_eval, records = train_mod.evaluate_on(result, embeddings, test_ids,
                                              labels, swears, cfg,
                                              spec.tradeoff_weight)
    layer = row_eval.layer
    save_predictions_csv(records, fold_dir / "predictions.csv")
    save_checkpoint(result.params_by_layer[layer],
                    result.optimizer_by_layer[layer],
                    fold_dir / "checkpoint.json")

    test_order = sorted(set(test_ids))
    test_words = sorted({w for sid in test_order for w in swears.get(sid, ())})
    after = bias_report(records, test_words, cfg.decision_threshold)

    init_p = init_params(embeddings.dim, cfg.hidden,
                         train_mod.layer_init_seed(cfg, layer))
    x_test = embeddings.layer_matrix(layer, test_order, "clear")
    before_records = predict_records(init_p, x_test, test_order, labels, swears,
                                     cfg.decision_threshold)
    before = bias_report(before_records, test_words, cfg.decision_threshold)

    _write_json(fold_dir / "bias_before.json", bias_report_to_dict(before))
    _write_json(fold_dir / "bias_after.json", bias_report_to_dict(after))

    row = {"fold": fold_name, "layer": layer, "f1": row_eval.f1,
           "recall": row_eval.recall, "precision": row_eval.precision,
           "fped": row_eval.fped, "fned": row_eval.fned,
           "stop_reason": result.trace.stop_reason}
    _write_json(fold_dir / "row.json", row)
    return row, before_records, records


def _pooled_top_words(record_pools: list, top_k: int, threshold: float,
                      ) -> list[dict]:
    # Sessions may recur across independent folds; duplicates are kept so
    # the pooled counts reflect every persisted prediction.
    pooled = [r for records in record_pools for r in records]
    if not pooled:
        return []
    words = sorted({w for r in pooled for w in r.swears})
    rep = bias_report(pooled, words, threshold)
    return _top_rows(rep, top_k)


def _run_in_dataset(spec: ExperimentSpec, out_dir: Path, lexicon: Lexicon,
                    source: list[Session], labels: dict, swears: dict,
                    embeddings: EmbeddingSet) -> ExperimentReport:
    folds = split_folds(source, k=spec.folds, seed=derive_seed(spec.seed, "folds"))
    rows = []
    before_pool: list = []
    after_pool: list = []
    for fold in folds:
        fold_dir = out_dir / f"fold_{fold.fold_index:02d}"
        try:
            row, before_records, after_records = _train_and_eval_fold(
                spec, fold_dir, str(fold.fold_index), embeddings,
                sorted(fold.train_ids), sorted(fold.validation_ids),
                sorted(fold.test_ids), labels, swears,
                derive_seed(spec.seed, f"train-fold{fold.fold_index}"),
            )
        except PipelineError as exc:
            raise type(exc)(f"fold {fold.fold_index}: {exc}") from exc
        rows.append(row)
        before_pool.append(before_records)
        after_pool.append(after_records)
    threshold = spec.train.decision_threshold
    return ExperimentReport(
        mode="in-dataset",
        spec=_spec_echo(spec),
        fold_rows=rows,
        mean_row=_mean_dict(rows),
        top_bias_words_before=_pooled_top_words(before_pool, spec.top_k, threshold),
        top_bias_words_after=_pooled_top_words(after_pool, spec.top_k, threshold),
        seeds={"encoder": derive_seed(spec.seed, "encoder"),
               "folds": derive_seed(spec.seed, "folds")},
    )


def _run_cross(spec: ExperimentSpec, out_dir: Path, lexicon: Lexicon,
               source: list[Session], labels: dict, swears: dict,
               embeddings: EmbeddingSet, encoder: EncoderConfig,
               ) -> ExperimentReport:
    assert spec.target_dataset is not None
    target_sessions = load_dataset(spec.target_dataset)
    target, t_labels, t_swears = _prepare(target_sessions, lexicon,
                                          spec.max_tokens)
    overlap = set(labels) & set(t_labels)
    if overlap:
        raise DataError(
            f"source and target share session ids (e.g. {sorted(overlap)[0]!r})"
        )
    target_emb = encode_corpus(target, lexicon, encoder, spec.mask_token)
    export_embeddings(target_emb, out_dir / "target_embeddings.jsonl")
    merged = EmbeddingSet(meta=embeddings.meta,
                          records={**embeddings.records, **target_emb.records})
    all_labels = {**labels, **t_labels}
    all_swears = {**swears, **t_swears}

    train_ids, val_ids = split_train_val(source, val_ratio=0.2,
                                         seed=derive_seed(spec.seed, "cross-val"))
    row, before_records, after_records = _train_and_eval_fold(
        spec, out_dir / "cross", "cross", merged,
        sorted(train_ids), sorted(val_ids), sorted(t_labels), all_labels,
        all_swears, derive_seed(spec.seed, "train-cross"),
    )
    threshold = spec.train.decision_threshold
    return ExperimentReport(
        mode="cross-dataset",
        spec=_spec_echo(spec),
        fold_rows=[row],
        mean_row=_mean_dict([row]),
        top_bias_words_before=_pooled_top_words([before_records], spec.top_k,
                                                threshold),
        top_bias_words_after=_pooled_top_words([after_records], spec.top_k,
                                               threshold),
        seeds={"encoder": derive_seed(spec.seed, "encoder"),
               "cross-val": derive_seed(spec.seed, "cross-val")},
    )


# --- bias audit over prediction files ---


@dataclass
class BiasAudit:
    report: BiasReport
    top_by_fprd: list[dict]
    top_by_frequency: list[dict]


def measure_bias(predictions_path: str | Path, lexicon_path: str | Path,
                 top_k: int = 10) -> BiasAudit:
    """Audit a predictions CSV against a lexicon: full bias report plus
    top-k tables by FPRD and by subset frequency."""
    lexicon = load_lexicon(lexicon_path)
    records = load_predictions_csv(predictions_path)
    report = bias_report(records, lexicon)
    by_freq = sorted(
        report.per_word.values(),
        key=lambda b: (-(b.support_pos + b.support_neg), b.phrase),
    )
    top_by_frequency = [
        {"sw": b.phrase, "fprd": b.fprd, "fnrd": b.fnrd,
         "support": b.support_pos + b.support_neg}
        for b in by_freq[:top_k]
    ]
    return BiasAudit(report=report, top_by_fprd=_top_rows(report, top_k),
                     top_by_frequency=top_by_frequency)


def write_bias_audit(audit: BiasAudit, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    report_path = out_dir / "bias_report.json"
    _write_json(report_path, bias_report_to_dict(audit.report))
    paths.append(report_path)
    for name, rows in (("top_fprd.csv", audit.top_by_fprd),
                       ("top_frequency.csv", audit.top_by_frequency)):
        path = out_dir / name
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sw", "fprd", "fnrd", "support"])
            for row in rows:
                writer.writerow([row["sw"], row["fprd"], row["fnrd"],
                                 row["support"]])
        paths.append(path)
    return paths


# --- report writing ---


def _report_payload(report: ExperimentReport) -> dict:
    return {
        "mode": report.mode,
        "spec": report.spec,
        "seeds": report.seeds,
        "folds": report.fold_rows,
        "mean": report.mean_row,
        "top_bias_words_before": report.top_bias_words_before,
        "top_bias_words_after": report.top_bias_words_after,
    }


def write_report(report: ExperimentReport, fmt: str, path: str | Path) -> Path:
    """Serialize an ExperimentReport as json, csv, or markdown with stable
    field ordering."""
    path = Path(path)
    if fmt == "json":
        _write_json(path, _report_payload(report))
    elif fmt == "csv":
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fold", "layer"] + list(METRIC_FIELDS))
            for row in report.fold_rows:
                writer.writerow([row["fold"], row["layer"]]
                                + [repr(row[k]) for k in METRIC_FIELDS])
            writer.writerow(["mean", ""]
                            + [repr(report.mean_row[k]) for k in METRIC_FIELDS])
    elif fmt == "markdown":
        lines = [
            f"# Experiment report ({report.mode})",
            "",
            "| fold | layer | f1 | recall | precision | fped | fned |",
            "| --- | --- | --- | --- | --- | --- | --- |",
        ]
        for row in report.fold_rows:
            lines.append(
                "| {fold} | {layer} | {f1:.4f} | {recall:.4f} | "
                "{precision:.4f} | {fped:.4f} | {fned:.4f} |".format(**row))
        m = report.mean_row
        lines.append(
            "| mean |  | {f1:.4f} | {recall:.4f} | {precision:.4f} | "
            "{fped:.4f} | {fned:.4f} |".format(**m))
        for title, rows in (("Top bias-inducing words (before training)",
                             report.top_bias_words_before),
                            ("Top bias-inducing words (after training)",
                             report.top_bias_words_after)):
            lines += ["", f"## {title}", "",
                      "| sw | fprd | fnrd | support |",
                      "| --- | --- | --- | --- |"]
            for row in rows:
                fnrd = "" if row["fnrd"] is None else f"{row['fnrd']:.4f}"
                lines.append(f"| {row['sw']} | {row['fprd']:.4f} | {fnrd} | "
                             f"{row['support']} |")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise UsageError(f"unknown report format: {fmt!r}")
    return path


def _write_layer_table(results, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "f1", "recall", "precision", "fped", "fned",
                         "relative_f1", "relative_fped"])
        for r in sorted(results, key=lambda r: r.layer):
            writer.writerow([r.layer, repr(r.f1), repr(r.recall),
                             repr(r.precision), repr(r.fped), repr(r.fned),
                             repr(r.relative_f1), repr(r.relative_fped)])


def read_layer_table(path: str | Path) -> list[train_mod.LayerResult]:
    """Read a layer table CSV back into LayerResults (for select-layer)."""
    path = Path(path)
    results = []
    try:
        fh = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"unreadable layer table {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                results.append(train_mod.LayerResult(
                    layer=int(row["layer"]), f1=float(row["f1"]),
                    recall=float(row["recall"]),
                    precision=float(row["precision"]),
                    fped=float(row["fped"]), fned=float(row["fned"]),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path.name} line {lineno}: {exc}") from exc
    if not results:
        raise DataError(f"{path.name}: no layer rows")
    return results


# checkpoint persistence re-exported for CLI use
checkpoint_save = save_checkpoint
checkpoint_load = load_checkpoint

__all__ = [
    "BiasAudit",
    "ExperimentReport",
    "ExperimentSpec",
    "checkpoint_load",
    "checkpoint_save",
    "measure_bias",
    "read_layer_table",
    "run_experiment",
    "write_bias_audit",
    "write_report",
]
