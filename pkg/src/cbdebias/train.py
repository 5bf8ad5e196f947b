"""Joint training loop, hidden-layer selector, beta sweep, and ablations.

Each encoder layer trains its own classifier head. Per optimizer step the
objective combines the task loss on averaged embeddings, the adversarial
cosine loss between clear and masked activations, and the soft fairness
constraint evaluated on the full validation set. Training continues while
the combined loss stays at or above the configured threshold; dropping
below it stops the run (a trade-off target rather than convergence).

Determinism: batch order is a seeded shuffle per epoch, every layer's
weights are initialized from a derived sub-seed, and all float reductions
run in fixed order, so a fixed seed reproduces the loss trace exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import model
from .encode import EmbeddingSet, synthetic_embedding
from .errors import DataError, NumericError, UsageError
from .metrics import (
    DEFAULT_DECISION_THRESHOLD,
    PredictionRecord,
    bias_report,
    record_from_prob,
)
from .model import ClassifierParams, OptimizerState
from .seeding import derive_seed

logger = logging.getLogger(__name__)

ABLATION_VARIANTS = ("full", "EB", "BF", "EF")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4
    batch_size: int = 16
    lr: float = 2e-5
    beta: float = 0.6
    lambda_a: float = 1.0
    threshold: float = 0.0
    layer_mode: str = "scan_all"       # "scan_all" | "single"
    layer: int | None = None           # 1-based, required for "single"
    seed: int = 0
    hidden: int = 512
    task_input: str = "synthetic"      # "synthetic" | "clear"
    decision_threshold: float = DEFAULT_DECISION_THRESHOLD
    val_subsample: int | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise UsageError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.beta < 0:
            raise UsageError(f"beta must be >= 0, got {self.beta}")
        if self.threshold < 0:
            raise UsageError(f"threshold must be >= 0, got {self.threshold}")
        if self.layer_mode not in ("scan_all", "single"):
            raise UsageError(f"unknown layer_mode: {self.layer_mode!r}")
        if self.layer_mode == "single" and self.layer is None:
            raise UsageError("layer_mode 'single' requires a layer index")
        if self.task_input not in ("synthetic", "clear"):
            raise UsageError(f"unknown task_input: {self.task_input!r}")

    @staticmethod
    def from_dict(obj: dict) -> "TrainConfig":
        return TrainConfig(**obj)


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    layer: int
    task: float
    adversarial: float
    fairness: float
    total: float


@dataclass(frozen=True)
class LayerResult:
    layer: int
    f1: float
    recall: float
    precision: float
    fped: float
    fned: float
    epoch: int = -1
    relative_f1: float | None = None
    relative_fped: float | None = None


@dataclass
class TrainTrace:
    steps: list[StepRecord] = field(default_factory=list)
    layer_results: list[LayerResult] = field(default_factory=list)
    stop_reason: str = "epochs_exhausted"


@dataclass
class TrainResult:
    params_by_layer: dict[int, ClassifierParams]
    optimizer_by_layer: dict[int, OptimizerState]
    trace: TrainTrace
    final_results: list[LayerResult]
    layers: list[int]


def layer_init_seed(config: TrainConfig, layer: int) -> int:
    """Sub-seed for one layer's classifier init (shared with the harness
    so the untrained baseline can be reproduced)."""
    return derive_seed(config.seed, f"init-layer{layer}")


def prf_binary(records: Sequence[PredictionRecord]) -> tuple[float, float, float]:
    """Positive-class precision, recall, F1; zero denominators yield 0."""
    tp = sum(1 for r in records if r.gold == 1 and r.predicted == 1)
    fp = sum(1 for r in records if r.gold == 0 and r.predicted == 1)
    fn = sum(1 for r in records if r.gold == 1 and r.predicted == 0)
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) else 0.0
    return precision, recall, f1


def predict_records(params: ClassifierParams, x: np.ndarray, ids: Sequence[str],
                    labels: Mapping[str, int],
                    swears_by_id: Mapping[str, Iterable[str]],
                    threshold: float = DEFAULT_DECISION_THRESHOLD,
                    ) -> list[PredictionRecord]:
    """Eval-mode predictions for the given sessions, as metric records."""
    probs = model.forward(params, x, mode="eval").probs[:, 1]
    return [
        record_from_prob(sid, labels[sid], float(p),
                         swears_by_id.get(sid, ()), threshold)
        for sid, p in zip(ids, probs)
    ]


def _relativize(results: list[LayerResult]) -> list[LayerResult]:
    """Fill relative_f1/relative_fped against the deepest layer present."""
    if not results:
        return results
    ref = max(results, key=lambda r: r.layer)
    return [
        replace(r, relative_f1=r.f1 - ref.f1, relative_fped=r.fped - ref.fped)
        for r in results
    ]


@dataclass
class _LayerData:
    clear: np.ndarray
    adv: np.ndarray
    task: np.ndarray
    x_val: np.ndarray


def train_joint(embeddings: EmbeddingSet,
                train_ids: Iterable[str], val_ids: Iterable[str],
                labels: Mapping[str, int],
                val_swears: Mapping[str, Iterable[str]],
                config: TrainConfig,
                resume: "TrainResult | None" = None,
                start_epoch: int = 0) -> TrainResult:
    """Joint training over the configured layer scope.

    Per step: task loss on the task-input embeddings, adversarial cosine
    loss between clear and masked hidden activations, soft fairness
    constraint on the validation set; if the combined loss is >= the
    threshold an Adam step is taken, otherwise training exits immediately
    with stop reason "threshold_reached". After each (epoch, layer) pass
    the classifier is evaluated on the validation set (F1 plus hard
    FPED/FNED).

    Passing resume (a previous TrainResult) plus start_epoch continues an
    interrupted run; the loss sequence matches an uninterrupted run
    exactly.
    """
    train_order = sorted(set(train_ids))
    val_order = sorted(set(val_ids))
    if not train_order:
        raise DataError("no training ids")
    if not val_order:
        raise DataError("no validation ids")
    for sid in train_order + val_order:
        if sid not in labels:
            raise DataError(f"missing label for session {sid!r}")

    n_layers = embeddings.layers
    if config.layer_mode == "single":
        assert config.layer is not None
        if not 1 <= config.layer <= n_layers:
            raise UsageError(f"layer {config.layer} out of range 1..{n_layers}")
        layers = [config.layer]
    else:
        layers = list(range(1, n_layers + 1))

    if config.val_subsample is not None and config.val_subsample < len(val_order):
        rng = np.random.default_rng(derive_seed(config.seed, "val-subsample"))
        pick = rng.choice(len(val_order), size=config.val_subsample, replace=False)
        fc_val_order = [val_order[i] for i in sorted(pick)]
    else:
        fc_val_order = val_order

    y_train = np.array([labels[sid] for sid in train_order])
    y_val_fc = np.array([labels[sid] for sid in fc_val_order])
    y_val = np.array([labels[sid] for sid in val_order])

    fc_words = sorted({w for sid in fc_val_order for w in val_swears.get(sid, ())})
    word_masks = {}
    for w in fc_words:
        mask = np.array([w in set(val_swears.get(sid, ())) for sid in fc_val_order])
        if mask.any():
            word_masks[w] = mask
    eval_words = sorted({w for sid in val_order for w in val_swears.get(sid, ())})

    data: dict[int, _LayerData] = {}
    for layer in layers:
        clear = embeddings.layer_matrix(layer, train_order, "clear")
        adv = embeddings.layer_matrix(layer, train_order, "adversarial")
        task = synthetic_embedding(clear, adv) if config.task_input == "synthetic" else clear
        x_val = embeddings.layer_matrix(layer, fc_val_order, "clear")
        data[layer] = _LayerData(clear=clear, adv=adv, task=task, x_val=x_val)
    x_val_full = {layer: embeddings.layer_matrix(layer, val_order, "clear")
                  for layer in layers}

    if resume is not None:
        params = {l: resume.params_by_layer[l].copy() for l in layers}
        opts = {l: OptimizerState(
            lr=resume.optimizer_by_layer[l].lr,
            beta1=resume.optimizer_by_layer[l].beta1,
            beta2=resume.optimizer_by_layer[l].beta2,
            epsilon=resume.optimizer_by_layer[l].epsilon,
            step=resume.optimizer_by_layer[l].step,
            m={k: v.copy() for k, v in resume.optimizer_by_layer[l].m.items()},
            v={k: v.copy() for k, v in resume.optimizer_by_layer[l].v.items()},
        ) for l in layers}
    else:
        params = {l: model.init_params(embeddings.dim, config.hidden,
                                       layer_init_seed(config, l)) for l in layers}
        opts = {l: model.init_optimizer(params[l], config.lr) for l in layers}

    n_train = len(train_order)
    batches_per_epoch = 0
    trace = TrainTrace()
    stop = False
    dropped_warned = False

    for epoch in range(start_epoch, config.epochs):
        rng = np.random.default_rng(derive_seed(config.seed, f"shuffle-epoch{epoch}"))
        perm = rng.permutation(n_train)
        batch_slices = [perm[i:i + config.batch_size]
                        for i in range(0, n_train, config.batch_size)]
        if batch_slices and len(batch_slices[-1]) < 2:
            if not dropped_warned:
                logger.warning("dropping trailing batch of size %d (< 2)",
                               len(batch_slices[-1]))
                dropped_warned = True
            batch_slices = batch_slices[:-1]
        if not batch_slices:
            raise DataError("not enough training sessions for one batch")
        batches_per_epoch = len(batch_slices)

        epoch_results: list[LayerResult] = []
        for layer_pos, layer in enumerate(layers):
            d = data[layer]
            p = params[layer]
            for b_idx, batch in enumerate(batch_slices):
                res = model.joint_loss_and_grads(
                    p, d.clear[batch], d.adv[batch], d.task[batch],
                    y_train[batch], d.x_val, y_val_fc, word_masks,
                    beta=config.beta, lambda_a=config.lambda_a,
                )
                total = res.losses.total
                if not np.isfinite(total):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} layer {layer} "
                        f"batch {b_idx}: {res.losses}"
                    )
                step_no = (epoch * len(layers) + layer_pos) \
                    * batches_per_epoch + b_idx
                trace.steps.append(StepRecord(
                    step=step_no, epoch=epoch, layer=layer,
                    task=res.losses.task, adversarial=res.losses.adversarial,
                    fairness=res.losses.fairness, total=total,
                ))
                if total >= config.threshold:
                    assert res.grads is not None
                    model.apply_running_update(p, res.task_batch_mean,
                                               res.task_batch_var)
                    model.adam_step(p, res.grads, opts[layer])
                else:
                    trace.stop_reason = "threshold_reached"
                    stop = True
                    break
            if stop:
                break
            records = predict_records(p, x_val_full[layer], val_order, labels,
                                      val_swears, config.decision_threshold)
            precision, recall, f1 = prf_binary(records)
            rep = bias_report(records, eval_words, config.decision_threshold)
            epoch_results.append(LayerResult(
                layer=layer, f1=f1, recall=recall, precision=precision,
                fped=rep.fped, fned=rep.fned, epoch=epoch,
            ))
        if len(epoch_results) == len(layers):
            trace.layer_results.extend(_relativize(epoch_results))
        else:
            trace.layer_results.extend(epoch_results)
        if stop:
            break

    last_complete = [r for r in trace.layer_results
                     if r.relative_f1 is not None]
    final_epoch = max((r.epoch for r in last_complete), default=None)
    final_results = [r for r in last_complete if r.epoch == final_epoch] \
        if final_epoch is not None else []

    return TrainResult(params_by_layer=params, optimizer_by_layer=opts,
                       trace=trace, final_results=final_results, layers=layers)


@dataclass(frozen=True)
class LayerSelection:
    best_layer: int
    table: tuple[LayerResult, ...]
    tradeoff_weight: float


def select_layer(results: Sequence[LayerResult], tradeoff_weight: float = 1.0,
                 expected_layers: int | None = None) -> LayerSelection:
    """Pick the layer maximizing relative_f1 - w * relative_fped, relative
    to the deepest layer in the table; ties go to the deeper layer."""
    if not results:
        raise DataError("empty layer results")
    layers_seen = [r.layer for r in results]
    if len(set(layers_seen)) != len(layers_seen):
        raise DataError("duplicate layers in results")
    if expected_layers is not None and set(layers_seen) != set(
            range(1, expected_layers + 1)):
        raise DataError(
            f"incomplete layer coverage: got {sorted(layers_seen)}, expected "
            f"1..{expected_layers}"
        )
    table = _relativize(list(results))
    best = max(table, key=lambda r: (r.relative_f1 - tradeoff_weight * r.relative_fped,
                                     r.layer))
    return LayerSelection(best_layer=best.layer, table=tuple(table),
                          tradeoff_weight=tradeoff_weight)


DEFAULT_BETA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class EvalRow:
    f1: float
    recall: float
    precision: float
    fped: float
    fned: float
    layer: int


def _pick_layer(result: TrainResult, config: TrainConfig,
                tradeoff_weight: float) -> int:
    if config.layer_mode == "single":
        assert config.layer is not None
        return config.layer
    return select_layer(result.final_results, tradeoff_weight).best_layer


def evaluate_on(result: TrainResult, embeddings: EmbeddingSet,
                eval_ids: Iterable[str], labels: Mapping[str, int],
                swears_by_id: Mapping[str, Iterable[str]],
                config: TrainConfig, tradeoff_weight: float = 1.0,
                ) -> tuple[EvalRow, list[PredictionRecord]]:
    """Evaluate a finished run on held-out sessions at the selected layer."""
    layer = _pick_layer(result, config, tradeoff_weight)
    order = sorted(set(eval_ids))
    x = embeddings.layer_matrix(layer, order, "clear")
    records = predict_records(result.params_by_layer[layer], x, order, labels,
                              swears_by_id, config.decision_threshold)
    precision, recall, f1 = prf_binary(records)
    words = sorted({w for sid in order for w in swears_by_id.get(sid, ())})
    rep = bias_report(records, words, config.decision_threshold)
    row = EvalRow(f1=f1, recall=recall, precision=precision,
                  fped=rep.fped, fned=rep.fned, layer=layer)
    return row, records


@dataclass(frozen=True)
class SweepRow:
    beta: float
    f1: float
    fped: float
    fned: float


def sweep_beta(embeddings: EmbeddingSet, train_ids: Iterable[str],
               val_ids: Iterable[str], eval_ids: Iterable[str],
               labels: Mapping[str, int],
               swears_by_id: Mapping[str, Iterable[str]],
               config: TrainConfig,
               grid: Sequence[float] = DEFAULT_BETA_GRID,
               tradeoff_weight: float = 1.0) -> list[SweepRow]:
    """One full train/eval per beta value, identical seeds throughout."""
    if not grid:
        raise UsageError("empty beta grid")
    for b in grid:
        if b < 0:
            raise UsageError(f"beta grid values must be >= 0, got {b}")
    rows: list[SweepRow] = []
    for b in grid:
        cfg = replace(config, beta=float(b))
        result = train_joint(embeddings, train_ids, val_ids, labels,
                             swears_by_id, cfg)
        row, _ = evaluate_on(result, embeddings, eval_ids, labels,
                             swears_by_id, cfg, tradeoff_weight)
        rows.append(SweepRow(beta=float(b), f1=row.f1, fped=row.fped,
                             fned=row.fned))
    return rows


def apply_ablation(config: TrainConfig, variant: str) -> TrainConfig:
    """Map an ablation variant onto a TrainConfig.

    EB removes the fairness constraint (beta=0); BF removes adversarial
    training (lambda_a=0, task loss on clear embeddings); EF feeds the
    clear embedding to the task loss instead of the synthetic mean while
    keeping the adversarial loss.
    """
    if variant == "full":
        return config
    if variant == "EB":
        return replace(config, beta=0.0)
    if variant == "BF":
        return replace(config, lambda_a=0.0, task_input="clear")
    if variant == "EF":
        return replace(config, task_input="clear")
    raise UsageError(f"unknown ablation variant: {variant!r} "
                     f"(expected one of {ABLATION_VARIANTS})")


@dataclass(frozen=True)
class AblationRow:
    variant: str
    f1: float
    recall: float
    precision: float
    fped: float
    fned: float


def run_ablation(variant: str, embeddings: EmbeddingSet,
                 train_ids: Iterable[str], val_ids: Iterable[str],
                 eval_ids: Iterable[str], labels: Mapping[str, int],
                 swears_by_id: Mapping[str, Iterable[str]],
                 config: TrainConfig, tradeoff_weight: float = 1.0) -> AblationRow:
    cfg = apply_ablation(config, variant)
    result = train_joint(embeddings, train_ids, val_ids, labels,
                         swears_by_id, cfg)
    row, _ = evaluate_on(result, embeddings, eval_ids, labels, swears_by_id,
                         cfg, tradeoff_weight)
    return AblationRow(variant=variant, f1=row.f1, recall=row.recall,
                       precision=row.precision, fped=row.fped, fned=row.fned)


def write_trace_jsonl(trace: TrainTrace, path: str | Path) -> None:
    """One step per line, then layer-result lines, then the stop reason."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in trace.steps:
            fh.write(json.dumps({
                "kind": "step", "step": s.step, "epoch": s.epoch,
                "layer": s.layer, "task": s.task, "adversarial": s.adversarial,
                "fairness": s.fairness, "total": s.total,
            }) + "\n")
        for r in trace.layer_results:
            fh.write(json.dumps({
                "kind": "layer_result", "epoch": r.epoch, "layer": r.layer,
                "f1": r.f1, "recall": r.recall, "precision": r.precision,
                "fped": r.fped, "fned": r.fned,
                "relative_f1": r.relative_f1, "relative_fped": r.relative_fped,
            }) + "\n")
        fh.write(json.dumps({"kind": "stop", "reason": trace.stop_reason}) + "\n")
