"""Constraint-based classifier and its training mathematics.

Architecture: input batch normalization -> dense(dim, hidden) -> ReLU ->
dense(hidden, 2) -> softmax. Three losses combine into the training
objective:

  * task: binary cross-entropy of the positive-class probability on the
    averaged (synthetic) embeddings;
  * adversarial: mean (1 - cosine) between the hidden activations of the
    clear and masked inputs, pushing the network to ignore the masked
    words;
  * fairness: a soft, differentiable version of the summed per-word
    FPRD+FNRD computed on an independent validation set, weighted by beta.

Gradients are derived by hand (no autograd) and checked against central
finite differences in the test suite. Because batch normalization sits on
the frozen input embeddings, batch statistics are constants with respect
to the parameters; train mode still normalizes by batch statistics and
maintains running statistics for eval mode.

All math is float64 for bit-stable determinism.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CheckpointError, DataError, NumericError
from .lexicon import Lexicon
from .metrics import PredictionRecord
from .seeding import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = 512
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_CLAMP = 1e-7

PARAM_FIELDS = ("w1", "b1", "bn_gamma", "bn_beta", "w2", "b2")
STATE_FIELDS = PARAM_FIELDS + ("bn_running_mean", "bn_running_var")
CHECKPOINT_VERSION = 1


@dataclass
class ClassifierParams:
    w1: np.ndarray
    b1: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    init_seed: int = 0

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            **{name: getattr(self, name).copy() for name in STATE_FIELDS},
            init_seed=self.init_seed,
        )


def init_params(dim: int, hidden: int = DEFAULT_HIDDEN, seed: int = 0) -> ClassifierParams:
    """Seeded scaled-uniform init (bound 1/sqrt(fan_in)); zero biases;
    identity batch-norm with running stats (0, 1)."""
    if dim < 1:
        raise DataError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(derive_seed(seed, "classifier-init"))
    bound1 = 1.0 / math.sqrt(dim)
    bound2 = 1.0 / math.sqrt(hidden)
    return ClassifierParams(
        w1=rng.uniform(-bound1, bound1, size=(dim, hidden)),
        b1=np.zeros(hidden),
        bn_gamma=np.ones(dim),
        bn_beta=np.zeros(dim),
        bn_running_mean=np.zeros(dim),
        bn_running_var=np.ones(dim),
        w2=rng.uniform(-bound2, bound2, size=(hidden, 2)),
        b2=np.zeros(2),
        init_seed=seed,
    )


@dataclass
class ForwardCache:
    x_norm: np.ndarray   # batch-normalized input before scale/shift
    bn_out: np.ndarray   # gamma * x_norm + beta (input to w1)
    z1: np.ndarray       # pre-ReLU
    hidden: np.ndarray   # post-ReLU
    probs: np.ndarray
    mode: str
    batch_mean: np.ndarray | None = None
    batch_var: np.ndarray | None = None


@dataclass
class ForwardResult:
    probs: np.ndarray
    hidden: np.ndarray
    cache: ForwardCache


def forward(params: ClassifierParams, x: np.ndarray, mode: str = "eval",
            update_running: bool = False, bn_momentum: float = BN_MOMENTUM,
            bn_eps: float = BN_EPS) -> ForwardResult:
    """Run the classifier on a batch of input vectors.

    Train mode normalizes by batch statistics (batch size >= 2 required)
    and, when update_running is set, folds them into the running stats
    with the given momentum. Eval mode uses running statistics.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"batch must be a non-empty 2-d array, got shape {x.shape}")
    if x.shape[1] != params.dim:
        raise DataError(f"input dim {x.shape[1]} != classifier dim {params.dim}")
    if mode not in ("train", "eval"):
        raise DataError(f"mode must be 'train' or 'eval', got {mode!r}")

    batch_mean = batch_var = None
    if mode == "train":
        if x.shape[0] < 2:
            raise DataError("train mode requires batch size >= 2")
        batch_mean = x.mean(axis=0)
        batch_var = x.var(axis=0)
        x_norm = (x - batch_mean) / np.sqrt(batch_var + bn_eps)
        if update_running:
            apply_running_update(params, batch_mean, batch_var, bn_momentum)
    else:
        x_norm = (x - params.bn_running_mean) / np.sqrt(params.bn_running_var + bn_eps)

    bn_out = params.bn_gamma * x_norm + params.bn_beta
    z1 = bn_out @ params.w1 + params.b1
    hidden = np.maximum(z1, 0.0)
    z2 = hidden @ params.w2 + params.b2
    shifted = z2 - z2.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    cache = ForwardCache(x_norm=x_norm, bn_out=bn_out, z1=z1, hidden=hidden,
                         probs=probs, mode=mode, batch_mean=batch_mean,
                         batch_var=batch_var)
    return ForwardResult(probs=probs, hidden=hidden, cache=cache)


def apply_running_update(params: ClassifierParams, batch_mean: np.ndarray,
                         batch_var: np.ndarray, momentum: float = BN_MOMENTUM) -> None:
    params.bn_running_mean = (1.0 - momentum) * params.bn_running_mean + momentum * batch_mean
    params.bn_running_var = (1.0 - momentum) * params.bn_running_var + momentum * batch_var


# --- losses ---


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step objective terms. adversarial stores the lambda-weighted
    contribution so the three fields always sum to total."""

    task: float
    adversarial: float
    fairness: float

    @property
    def total(self) -> float:
        return self.task + self.adversarial + self.fairness


def _cosine_rows(x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n1 = np.linalg.norm(x1, axis=1)
    n2 = np.linalg.norm(x2, axis=1)
    ok = (n1 > 0.0) & (n2 > 0.0)
    dot = np.einsum("ij,ij->i", x1, x2)
    denom = np.where(ok, n1 * n2, 1.0)
    cos = np.where(ok, dot / denom, 0.0)
    return cos, n1, n2, ok


def embedding_loss(x1: np.ndarray, x2: np.ndarray) -> float:
    """Batch mean of 1 - cosine(x1_i, x2_i); range [0, 2].

    A pair with a zero vector contributes loss 1 and is flagged.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape or x1.ndim != 2:
        raise DataError(f"shape mismatch: {x1.shape} vs {x2.shape}")
    cos, _, _, ok = _cosine_rows(x1, x2)
    if not ok.all():
        logger.warning("embedding_loss: %d zero-vector pairs set to loss 1",
                       int((~ok).sum()))
    return float(np.mean(1.0 - cos))


def embedding_loss_backward(x1: np.ndarray, x2: np.ndarray,
                            scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of scale * embedding_loss w.r.t. x1 and x2.

    Zero-vector pairs get zero gradient (their loss is constant).
    """
    cos, n1, n2, ok = _cosine_rows(x1, x2)
    n = x1.shape[0]
    safe1 = np.where(ok, n1, 1.0)
    safe2 = np.where(ok, n2, 1.0)
    # d cos/d x1 = x2/(|x1||x2|) - cos * x1/|x1|^2
    g1 = x2 / (safe1 * safe2)[:, None] - (cos / safe1 ** 2)[:, None] * x1
    g2 = x1 / (safe1 * safe2)[:, None] - (cos / safe2 ** 2)[:, None] * x2
    coeff = np.where(ok, -scale / n, 0.0)[:, None]
    return coeff * g1, coeff * g2


def task_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy of the positive-class probability,
    clamped to [1e-7, 1 - 1e-7]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise DataError(f"probs must be (n, 2), got {probs.shape}")
    if labels.shape != (probs.shape[0],):
        raise DataError(f"labels shape {labels.shape} != batch size {probs.shape[0]}")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    p = np.clip(probs[:, 1], PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = labels.astype(np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def task_loss_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of task_loss w.r.t. the logits (pre-softmax), (n, 2).

    BCE through the softmax positive column collapses to (p - y)/n on the
    positive logit; clamped rows get zero gradient.
    """
    p = probs[:, 1]
    y = np.asarray(labels, dtype=np.float64)
    active = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    n = probs.shape[0]
    g = np.where(active, (p - y) / n, 0.0)
    dz = np.empty_like(probs)
    dz[:, 1] = g
    dz[:, 0] = -g
    return dz


@dataclass
class FairnessLossResult:
    value: float                       # beta-weighted soft constraint
    grad_prob: np.ndarray              # d value / d prob_positive per row
    per_word: dict[str, tuple[float | None, float | None]]  # soft (fprd, fnrd)


def fairness_loss(prob_pos: np.ndarray, gold: np.ndarray,
                  word_masks: Mapping[str, np.ndarray],
                  beta: float) -> FairnessLossResult:
    """Soft fairness constraint over validation predictions.

    value = beta * sum over words of (|soft_FPR - soft_FPR_w| +
    |soft_FNR - soft_FNR_w|), where the soft rates are means of predicted
    probabilities (see metrics.soft_error_rates). Absolute values use
    subgradient 0 at ties. Components with an empty conditioning set are
    skipped, mirroring the exact metrics.
    """
    prob_pos = np.asarray(prob_pos, dtype=np.float64)
    gold = np.asarray(gold)
    if prob_pos.ndim != 1 or prob_pos.shape != gold.shape:
        raise DataError("prob_pos and gold must be matching 1-d arrays")
    if prob_pos.shape[0] == 0:
        raise DataError("empty validation set")
    if not np.isin(gold, (0, 1)).all():
        raise DataError("gold labels must be 0 or 1")
    if beta < 0:
        raise DataError(f"beta must be >= 0, got {beta}")

    neg = gold == 0
    pos = gold == 1
    n_neg = int(neg.sum())
    n_pos = int(pos.sum())
    soft_fpr = float(prob_pos[neg].mean()) if n_neg else None
    soft_fnr = float((1.0 - prob_pos[pos]).mean()) if n_pos else None

    total = 0.0
    grad = np.zeros_like(prob_pos)
    per_word: dict[str, tuple[float | None, float | None]] = {}
    for word in sorted(word_masks):
        mask = np.asarray(word_masks[word], dtype=bool)
        if mask.shape != prob_pos.shape:
            raise DataError(f"word mask for {word!r} has wrong shape")
        if not mask.any():
            continue
        neg_w = mask & neg
        pos_w = mask & pos
        n_neg_w = int(neg_w.sum())
        n_pos_w = int(pos_w.sum())

        fprd_w = fnrd_w = None
        if soft_fpr is not None and n_neg_w:
            sub_fpr = float(prob_pos[neg_w].mean())
            diff = soft_fpr - sub_fpr
            fprd_w = abs(diff)
            total += fprd_w
            s = float(np.sign(diff))
            if s != 0.0:
                grad[neg] += s / n_neg
                grad[neg_w] -= s / n_neg_w
        if soft_fnr is not None and n_pos_w:
            sub_fnr = float((1.0 - prob_pos[pos_w]).mean())
            diff = soft_fnr - sub_fnr
            fnrd_w = abs(diff)
            total += fnrd_w
            s = float(np.sign(diff))
            if s != 0.0:
                # d soft_FNR / d p_i = -1/|pos| on gold-positives
                grad[pos] -= s / n_pos
                grad[pos_w] += s / n_pos_w
        per_word[word] = (fprd_w, fnrd_w)

    return FairnessLossResult(value=beta * total, grad_prob=beta * grad,
                              per_word=per_word)


def fairness_loss_from_records(records: Sequence[PredictionRecord],
                               lexicon: Lexicon | Sequence[str],
                               beta: float) -> float:
    """Convenience wrapper: soft fairness loss straight from prediction
    records, considering every lexicon word present in >= 1 record."""
    entries = lexicon.entries if isinstance(lexicon, Lexicon) else tuple(lexicon)
    prob = np.array([r.prob_positive for r in records])
    gold = np.array([r.gold for r in records])
    masks = {}
    for word in entries:
        mask = np.array([word in r.swears for r in records])
        if mask.any():
            masks[word] = mask
    return fairness_loss(prob, gold, masks, beta).value


# --- backward ---


def zero_grads(params: ClassifierParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}


def _dense_backward(params: ClassifierParams, cache: ForwardCache,
                    dz2: np.ndarray | None = None,
                    dhidden: np.ndarray | None = None,
                    out: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Backpropagate upstream gradients (at the logits and/or the hidden
    activations) through one forward pass, accumulating into `out`.

    Identical for train and eval caches: the normalized input is a
    constant w.r.t. the parameters in both modes.
    """
    grads = out if out is not None else zero_grads(params)
    dh = np.zeros_like(cache.hidden)
    if dz2 is not None:
        grads["w2"] += cache.hidden.T @ dz2
        grads["b2"] += dz2.sum(axis=0)
        dh += dz2 @ params.w2.T
    if dhidden is not None:
        dh += dhidden
    dz1 = dh * (cache.z1 > 0.0)
    grads["w1"] += cache.bn_out.T @ dz1
    grads["b1"] += dz1.sum(axis=0)
    dbn_out = dz1 @ params.w1.T
    grads["bn_gamma"] += (dbn_out * cache.x_norm).sum(axis=0)
    grads["bn_beta"] += dbn_out.sum(axis=0)
    return grads


def _prob_grad_to_logits(probs: np.ndarray, grad_prob_pos: np.ndarray) -> np.ndarray:
    """Convert d loss/d prob_positive into d loss/d logits via the softmax
    Jacobian of the positive column."""
    p = probs[:, 1]
    g = grad_prob_pos * p * (1.0 - p)
    dz = np.empty_like(probs)
    dz[:, 1] = g
    dz[:, 0] = -g
    return dz


@dataclass
class JointStepResult:
    losses: LossBreakdown
    grads: dict[str, np.ndarray] | None
    raw_adversarial: float
    fairness_per_word: dict[str, tuple[float | None, float | None]]
    task_batch_mean: np.ndarray
    task_batch_var: np.ndarray
    val_probs: np.ndarray


def joint_loss_and_grads(params: ClassifierParams,
                         x_clear: np.ndarray, x_adv: np.ndarray,
                         x_task: np.ndarray, y_task: np.ndarray,
                         x_val: np.ndarray, y_val: np.ndarray,
                         val_word_masks: Mapping[str, np.ndarray],
                         beta: float, lambda_a: float = 1.0,
                         bn_eps: float = BN_EPS,
                         want_grads: bool = True) -> JointStepResult:
    """One joint objective evaluation: task loss on the task batch,
    adversarial cosine loss between clear/adversarial hidden activations,
    and the soft fairness constraint on the full validation set (eval
    mode, running statistics).

    Pure: never mutates params. The training loop applies the running-
    statistics update (from the task pass) and the optimizer step only
    when a step is actually taken.
    """
    fwd_task = forward(params, x_task, mode="train", bn_eps=bn_eps)
    fwd_clear = forward(params, x_clear, mode="train", bn_eps=bn_eps)
    fwd_adv = forward(params, x_adv, mode="train", bn_eps=bn_eps)
    fwd_val = forward(params, x_val, mode="eval", bn_eps=bn_eps)

    l_t = task_loss(fwd_task.probs, y_task)
    raw_la = embedding_loss(fwd_clear.hidden, fwd_adv.hidden)
    fair = fairness_loss(fwd_val.probs[:, 1], y_val, val_word_masks, beta)
    losses = LossBreakdown(task=l_t, adversarial=lambda_a * raw_la,
                           fairness=fair.value)

    grads = None
    if want_grads:
        grads = zero_grads(params)
        _dense_backward(params, fwd_task.cache,
                        dz2=task_loss_backward(fwd_task.probs, y_task), out=grads)
        if lambda_a != 0.0:
            g_clear, g_adv = embedding_loss_backward(fwd_clear.hidden,
                                                     fwd_adv.hidden, scale=lambda_a)
            _dense_backward(params, fwd_clear.cache, dhidden=g_clear, out=grads)
            _dense_backward(params, fwd_adv.cache, dhidden=g_adv, out=grads)
        if beta != 0.0:
            dz_val = _prob_grad_to_logits(fwd_val.probs, fair.grad_prob)
            _dense_backward(params, fwd_val.cache, dz2=dz_val, out=grads)

    assert fwd_task.cache.batch_mean is not None
    assert fwd_task.cache.batch_var is not None
    return JointStepResult(
        losses=losses,
        grads=grads,
        raw_adversarial=raw_la,
        fairness_per_word=fair.per_word,
        task_batch_mean=fwd_task.cache.batch_mean,
        task_batch_var=fwd_task.cache.batch_var,
        val_probs=fwd_val.probs[:, 1],
    )


# --- optimizer ---


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(params: ClassifierParams, lr: float) -> OptimizerState:
    return OptimizerState(
        lr=lr,
        m={name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS},
        v={name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS},
    )


def adam_step(params: ClassifierParams, grads: Mapping[str, np.ndarray],
              state: OptimizerState) -> None:
    """Standard bias-corrected Adam update, in place."""
    for name in PARAM_FIELDS:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if g.shape != getattr(params, name).shape:
            raise DataError(f"gradient shape mismatch for parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in PARAM_FIELDS:
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        setattr(params, name, getattr(params, name) - update)


# --- checkpoints ---


def save_checkpoint(params: ClassifierParams, optimizer: OptimizerState,
                    path: str | Path) -> None:
    """Write params + optimizer state as JSON (atomic replace). Decimal
    float serialization round-trips bit-exactly."""
    path = Path(path)
    payload = {
        "schema_version": CHECKPOINT_VERSION,
        "config": {"dim": params.dim, "hidden": params.hidden,
                   "init_seed": params.init_seed},
        "shapes": {name: list(getattr(params, name).shape) for name in STATE_FIELDS},
        "params": {name: getattr(params, name).ravel().tolist() for name in STATE_FIELDS},
        "optimizer": {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step": optimizer.step,
            "m": {name: optimizer.m[name].ravel().tolist() for name in PARAM_FIELDS},
            "v": {name: optimizer.v[name].ravel().tolist() for name in PARAM_FIELDS},
        },
        "step": optimizer.step,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[ClassifierParams, OptimizerState]:
    """Load a checkpoint; any structural problem raises CheckpointError
    without returning partial state."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    try:
        if payload["schema_version"] != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint schema version {payload['schema_version']} != "
                f"{CHECKPOINT_VERSION}"
            )
        shapes = payload["shapes"]
        raw = payload["params"]
        arrays: dict[str, np.ndarray] = {}
        for name in STATE_FIELDS:
            shape = tuple(shapes[name])
            flat = np.asarray(raw[name], dtype=np.float64)
            if flat.size != int(np.prod(shape)):
                raise CheckpointError(
                    f"checkpoint {path.name}: parameter {name!r} has "
                    f"{flat.size} values, expected shape {shape}"
                )
            arrays[name] = flat.reshape(shape)
        params = ClassifierParams(**arrays,
                                  init_seed=int(payload["config"]["init_seed"]))
        opt_raw = payload["optimizer"]
        optimizer = OptimizerState(
            lr=float(opt_raw["lr"]),
            beta1=float(opt_raw["beta1"]),
            beta2=float(opt_raw["beta2"]),
            epsilon=float(opt_raw["epsilon"]),
            step=int(opt_raw["step"]),
            m={name: np.asarray(opt_raw["m"][name], dtype=np.float64).reshape(
                arrays[name].shape) for name in PARAM_FIELDS},
            v={name: np.asarray(opt_raw["v"][name], dtype=np.float64).reshape(
                arrays[name].shape) for name in PARAM_FIELDS},
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    return params, optimizer
