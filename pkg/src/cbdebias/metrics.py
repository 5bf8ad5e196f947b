"""Swear-word bias metrics for binary classifiers.

Exact metrics: FPR = FP/(FP+TN), FNR = FN/(FN+TP); per-word FPRD/FNRD are
the absolute differences between the rates on the subset of records
containing the word and the global rates; FPED/FNED sum those differences
over all evaluated words (lower is fairer).

Soft metrics replace counts with mean predicted probabilities so the same
quantities stay differentiable inside a training objective; they reduce to
the exact rates when every probability is 0 or 1.

A rate with an empty denominator is undefined (None) and skipped from
aggregation rather than zero-filled, so FPED/FNED are never deflated by
unmeasurable words; skip reasons are surfaced in the report.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError
from .lexicon import Lexicon

DEFAULT_DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class PredictionRecord:
    """One scored session: gold label, hard prediction, positive-class
    probability, and the lexicon phrases present in the session text."""

    session_id: str
    gold: int
    predicted: int
    prob_positive: float
    swears: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.gold not in (0, 1):
            raise DataError(f"record {self.session_id!r}: gold must be 0 or 1")
        if self.predicted not in (0, 1):
            raise DataError(f"record {self.session_id!r}: predicted must be 0 or 1")
        if not 0.0 <= self.prob_positive <= 1.0:
            raise DataError(
                f"record {self.session_id!r}: prob_positive out of [0,1]: "
                f"{self.prob_positive}"
            )


def record_from_prob(session_id: str, gold: int, prob_positive: float,
                     swears: Iterable[str] = (),
                     threshold: float = DEFAULT_DECISION_THRESHOLD) -> PredictionRecord:
    """Build a record with the hard prediction derived from the probability."""
    return PredictionRecord(
        session_id=session_id,
        gold=gold,
        predicted=1 if prob_positive >= threshold else 0,
        prob_positive=prob_positive,
        swears=frozenset(swears),
    )


@dataclass(frozen=True)
class ErrorRates:
    fpr: float | None
    fnr: float | None
    fp: int
    tn: int
    fn: int
    tp: int


@dataclass(frozen=True)
class WordBias:
    phrase: str
    fprd: float | None
    fnrd: float | None
    support_pos: int
    support_neg: int
    skipped: tuple[str, ...] = ()


@dataclass(frozen=True)
class SoftErrorRates:
    soft_fpr: float | None
    soft_fnr: float | None


@dataclass(frozen=True)
class BiasReport:
    """Full bias audit: global rates, per-word differences sorted by FPRD
    descending, and the FPED/FNED sums over evaluated words.

    mean_fprd/mean_fnrd are per-evaluated-word means, an extra for
    comparing across lexicons of different sizes; the sums are the primary
    quantities.
    """

    fpr: float | None
    fnr: float | None
    per_word: dict[str, WordBias]
    fped: float
    fned: float
    skipped_words: dict[str, str]
    threshold: float
    evaluated_fprd: int
    evaluated_fnrd: int
    mean_fprd: float | None
    mean_fnrd: float | None


def error_rates(records: Sequence[PredictionRecord]) -> ErrorRates:
    """Global false-positive and false-negative rates.

    A rate whose denominator is zero is returned as None so downstream
    aggregation can skip it.
    """
    if not records:
        raise DataError("empty record list")
    fp = tn = fn = tp = 0
    for r in records:
        if r.gold == 0:
            if r.predicted == 1:
                fp += 1
            else:
                tn += 1
        else:
            if r.predicted == 0:
                fn += 1
            else:
                tp += 1
    fpr = fp / (fp + tn) if (fp + tn) else None
    fnr = fn / (fn + tp) if (fn + tp) else None
    return ErrorRates(fpr=fpr, fnr=fnr, fp=fp, tn=tn, fn=fn, tp=tp)


def word_bias(records: Sequence[PredictionRecord], word: str,
              global_rates: ErrorRates | None = None) -> WordBias:
    """FPRD/FNRD for one word: |global rate - rate on the subset of records
    containing the word|. Undefined components are skipped with a reason."""
    if global_rates is None:
        global_rates = error_rates(records)
    subset = [r for r in records if word in r.swears]
    support_pos = sum(1 for r in subset if r.gold == 1)
    support_neg = len(subset) - support_pos
    skipped: list[str] = []
    fprd = fnrd = None
    if not subset:
        skipped.append("phrase absent from all records")
    else:
        sub = error_rates(subset)
        if global_rates.fpr is None:
            skipped.append("global FPR undefined (no gold-negative records)")
        elif sub.fpr is None:
            skipped.append("no gold-negative records contain the phrase")
        else:
            fprd = abs(global_rates.fpr - sub.fpr)
        if global_rates.fnr is None:
            skipped.append("global FNR undefined (no gold-positive records)")
        elif sub.fnr is None:
            skipped.append("no gold-positive records contain the phrase")
        else:
            fnrd = abs(global_rates.fnr - sub.fnr)
    return WordBias(phrase=word, fprd=fprd, fnrd=fnrd,
                    support_pos=support_pos, support_neg=support_neg,
                    skipped=tuple(skipped))


def _lexicon_entries(lexicon: Lexicon | Sequence[str]) -> tuple[str, ...]:
    if isinstance(lexicon, Lexicon):
        return lexicon.entries
    return tuple(lexicon)


def bias_report(records: Sequence[PredictionRecord],
                lexicon: Lexicon | Sequence[str],
                threshold: float = DEFAULT_DECISION_THRESHOLD) -> BiasReport:
    """Aggregate word_bias over every lexicon word present in >= 1 record.

    FPED/FNED sum the defined components only; words with a skipped
    component are listed in skipped_words with the reason.
    """
    rates = error_rates(records)
    present: list[str] = []
    for word in _lexicon_entries(lexicon):
        if any(word in r.swears for r in records):
            present.append(word)

    biases = [word_bias(records, w, rates) for w in present]
    biases.sort(key=lambda b: (-(b.fprd if b.fprd is not None else -1.0), b.phrase))
    per_word = {b.phrase: b for b in biases}
    skipped_words = {b.phrase: "; ".join(b.skipped) for b in biases if b.skipped}

    fprds = [b.fprd for b in biases if b.fprd is not None]
    fnrds = [b.fnrd for b in biases if b.fnrd is not None]
    return BiasReport(
        fpr=rates.fpr,
        fnr=rates.fnr,
        per_word=per_word,
        fped=sum(fprds),
        fned=sum(fnrds),
        skipped_words=skipped_words,
        threshold=threshold,
        evaluated_fprd=len(fprds),
        evaluated_fnrd=len(fnrds),
        mean_fprd=sum(fprds) / len(fprds) if fprds else None,
        mean_fnrd=sum(fnrds) / len(fnrds) if fnrds else None,
    )


def soft_error_rates(records: Sequence[PredictionRecord]) -> SoftErrorRates:
    """Differentiable stand-in for error_rates: mean positive probability
    over gold-negatives, mean negative probability over gold-positives."""
    if not records:
        raise DataError("empty record list")
    neg = [r.prob_positive for r in records if r.gold == 0]
    pos = [1.0 - r.prob_positive for r in records if r.gold == 1]
    return SoftErrorRates(
        soft_fpr=sum(neg) / len(neg) if neg else None,
        soft_fnr=sum(pos) / len(pos) if pos else None,
    )


def bias_report_to_dict(report: BiasReport) -> dict:
    """Stable-ordered JSON-serializable view of a BiasReport."""
    return {
        "threshold": report.threshold,
        "fpr": report.fpr,
        "fnr": report.fnr,
        "fped": report.fped,
        "fned": report.fned,
        "evaluated_fprd": report.evaluated_fprd,
        "evaluated_fnrd": report.evaluated_fnrd,
        "mean_fprd": report.mean_fprd,
        "mean_fnrd": report.mean_fnrd,
        "per_word": {
            phrase: {
                "fprd": b.fprd,
                "fnrd": b.fnrd,
                "support_pos": b.support_pos,
                "support_neg": b.support_neg,
            }
            for phrase, b in report.per_word.items()
        },
        "skipped_words": dict(sorted(report.skipped_words.items())),
    }


PREDICTIONS_HEADER = ("id", "gold", "pred", "prob", "swears")


def save_predictions_csv(records: Sequence[PredictionRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for r in records:
            writer.writerow([r.session_id, r.gold, r.predicted,
                             repr(r.prob_positive), "|".join(sorted(r.swears))])


def load_predictions_csv(path: str | Path,
                         threshold: float = DEFAULT_DECISION_THRESHOLD,
                         ) -> list[PredictionRecord]:
    """Read a predictions CSV (header id,gold,pred,prob,swears).

    Validates that the hard prediction is consistent with the probability
    at the given decision threshold; errors report the line number.
    """
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"unreadable predictions file {path}: {exc}") from exc
    records: list[PredictionRecord] = []
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path.name}: empty predictions file") from None
        if tuple(header) != PREDICTIONS_HEADER:
            raise DataError(
                f"{path.name} line 1: expected header {','.join(PREDICTIONS_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path.name} line {lineno}"
            if len(row) != 5:
                raise DataError(f"{where}: expected 5 columns, got {len(row)}")
            sid, gold_s, pred_s, prob_s, swears_s = row
            try:
                gold = int(gold_s)
                pred = int(pred_s)
                prob = float(prob_s)
            except ValueError as exc:
                raise DataError(f"{where}: {exc}") from exc
            swears = frozenset(s for s in swears_s.split("|") if s)
            try:
                record = PredictionRecord(session_id=sid, gold=gold, predicted=pred,
                                          prob_positive=prob, swears=swears)
            except DataError as exc:
                raise DataError(f"{where}: {exc}") from exc
            expected = 1 if prob >= threshold else 0
            if pred != expected:
                raise DataError(
                    f"{where}: pred={pred} inconsistent with prob={prob} at "
                    f"threshold {threshold}"
                )
            records.append(record)
    if not records:
        raise DataError(f"{path.name}: no prediction rows")
    return records
