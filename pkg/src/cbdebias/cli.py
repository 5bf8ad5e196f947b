"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
(non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, train as train_mod
from .corpus import (
    aggregate_and_clean,
    distribution_stats,
    generate_synthetic_corpus,
    load_dataset,
    load_generator_config,
    save_dataset,
    split_folds,
)
from .encode import EncoderConfig, encode_corpus, export_embeddings, import_embeddings
from .errors import DataError, NumericError, PipelineError, UsageError
from .harness import ExperimentSpec, measure_bias, run_experiment, write_bias_audit
from .lexicon import DEFAULT_MASK_TOKEN, find_matches, load_lexicon, mask_text
from .metrics import bias_report, save_predictions_csv
from .model import load_checkpoint
from .seeding import derive_seed
from .train import TrainConfig, select_layer


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--lambda-a", type=float, default=1.0, dest="lambda_a")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--layer", type=int, default=None,
                   help="train a single layer instead of scanning all")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--hidden", type=int, default=512)


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--vocab-buckets", type=int, default=4096)


def _train_config(args) -> TrainConfig:
    layer_mode = "single" if args.layer is not None else "scan_all"
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       lr=args.lr, beta=args.beta, lambda_a=args.lambda_a,
                       threshold=args.threshold, layer_mode=layer_mode,
                       layer=args.layer, seed=args.seed, hidden=args.hidden)


def _encoder_config(args, seed: int) -> EncoderConfig:
    return EncoderConfig(dim=args.dim, layers=args.layers,
                         vocab_buckets=args.vocab_buckets, seed=seed)


def _load_inputs(args, max_tokens: int = 512):
    lexicon = load_lexicon(args.lexicon)
    sessions = [aggregate_and_clean(s, max_tokens)
                for s in load_dataset(args.dataset)]
    labels = {s.id: s.label for s in sessions}
    swears = {s.id: tuple(sorted({m.phrase for m in
                                  find_matches(s.aggregated_text or "", lexicon)}))
              for s in sessions}
    return lexicon, sessions, labels, swears


def _embeddings_for(args, sessions, lexicon, seed: int):
    if getattr(args, "embeddings", None):
        return import_embeddings(args.embeddings)
    return encode_corpus(sessions, lexicon,
                         _encoder_config(args, derive_seed(seed, "encoder")))


def _single_split(sessions, seed: int):
    fold = split_folds(sessions, k=1, seed=derive_seed(seed, "folds"))[0]
    return (sorted(fold.train_ids), sorted(fold.validation_ids),
            sorted(fold.test_ids))


def cmd_gen_synthetic(args) -> int:
    config = load_generator_config(args.config)
    sessions = generate_synthetic_corpus(config, seed=args.seed)
    save_dataset(sessions, args.out)
    print(f"wrote {len(sessions)} sessions to {args.out}")
    if args.lexicon_out:
        Path(args.lexicon_out).write_text(
            "".join(f"{w}\n" for w in config.lexicon_entries()), encoding="utf-8")
        print(f"wrote lexicon ({len(config.lexicon_entries())} entries) "
              f"to {args.lexicon_out}")
    return 0


def cmd_stats(args) -> int:
    lexicon = load_lexicon(args.lexicon)
    sessions = [aggregate_and_clean(s) for s in load_dataset(args.dataset)]
    stats = distribution_stats(sessions, lexicon)
    row = []
    for name in stats.FIELD_ORDER:
        value = getattr(stats, name)
        row.append("undefined" if value is None else repr(value))
    out = args.out
    lines = [",".join(stats.FIELD_ORDER), ",".join(row)]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    # session-length summary reports both candidate units
    n = len(sessions)
    avg_comments = sum(len(s.comments) for s in sessions) / n
    avg_tokens = sum(len((s.aggregated_text or "").split()) for s in sessions) / n
    summary = {"n_sessions": n, "n_swear_sessions": stats.n_swear_sessions,
               "avg_comments_per_session": avg_comments,
               "avg_tokens_per_session": avg_tokens}
    if out:
        summary_path = Path(out).with_suffix(".summary.json")
        summary_path.write_text(json.dumps(summary, indent=2) + "\n",
                                encoding="utf-8")
    else:
        sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return 0


def cmd_mask(args) -> int:
    lexicon = load_lexicon(args.lexicon)
    if args.text is not None:
        print(mask_text(args.text, lexicon, args.mask_token))
        return 0
    if args.dataset is None:
        raise UsageError("mask requires --text or --dataset")
    sessions = [aggregate_and_clean(s) for s in load_dataset(args.dataset)]
    out = Path(args.out) if args.out else None
    lines = []
    for s in sessions:
        masked = mask_text(s.aggregated_text or "", lexicon, args.mask_token)
        lines.append(json.dumps({"id": s.id, "masked_text": masked}))
    text = "\n".join(lines) + "\n"
    if out:
        out.write_text(text, encoding="utf-8")
        print(f"wrote {len(lines)} masked sessions to {out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_encode(args) -> int:
    lexicon = load_lexicon(args.lexicon)
    sessions = [aggregate_and_clean(s) for s in load_dataset(args.dataset)]
    config = _encoder_config(args, derive_seed(args.seed, "encoder"))
    embeddings = encode_corpus(sessions, lexicon, config)
    export_embeddings(embeddings, args.out)
    print(f"wrote {len(embeddings.records)} embedding records to {args.out}")
    return 0


def cmd_measure_bias(args) -> int:
    audit = measure_bias(args.predictions, args.lexicon, args.top_k)
    paths = write_bias_audit(audit, args.out)
    rep = audit.report
    print(f"fpr={rep.fpr} fnr={rep.fnr} fped={rep.fped:.6f} fned={rep.fned:.6f} "
          f"evaluated_words={rep.evaluated_fprd}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_train(args) -> int:
    lexicon, sessions, labels, swears = _load_inputs(args)
    embeddings = _embeddings_for(args, sessions, lexicon, args.seed)
    train_ids, val_ids, test_ids = _single_split(sessions, args.seed)
    cfg = replace(_train_config(args), seed=derive_seed(args.seed, "train"))
    result = train_mod.train_joint(embeddings, train_ids, val_ids, labels,
                                   swears, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_mod.write_trace_jsonl(result.trace, out / "trace.jsonl")
    row, records = train_mod.evaluate_on(result, embeddings, test_ids, labels,
                                         swears, cfg)
    save_predictions_csv(records, out / "predictions.csv")
    harness.checkpoint_save(result.params_by_layer[row.layer],
                            result.optimizer_by_layer[row.layer],
                            out / "checkpoint.json")
    print(f"stop_reason={result.trace.stop_reason} layer={row.layer} "
          f"f1={row.f1:.4f} fped={row.fped:.4f} fned={row.fned:.4f}")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    lexicon, sessions, labels, swears = _load_inputs(args)
    embeddings = _embeddings_for(args, sessions, lexicon, args.seed)
    params, _ = load_checkpoint(args.checkpoint)
    ids = sorted(labels)
    layer = args.layer if args.layer is not None else embeddings.layers
    x = embeddings.layer_matrix(layer, ids, "clear")
    records = train_mod.predict_records(params, x, ids, labels, swears)
    precision, recall, f1 = train_mod.prf_binary(records)
    words = sorted({w for sid in ids for w in swears.get(sid, ())})
    rep = bias_report(records, words)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_predictions_csv(records, out / "predictions.csv")
    print(f"layer={layer} f1={f1:.4f} recall={recall:.4f} "
          f"precision={precision:.4f} fped={rep.fped:.4f} fned={rep.fned:.4f}")
    return 0


def cmd_experiment(args) -> int:
    spec = ExperimentSpec(
        dataset=args.dataset,
        target_dataset=args.target_dataset,
        lexicon=args.lexicon,
        out_dir=args.out,
        embeddings_path=args.embeddings,
        encoder=_encoder_config(args, 0),
        train=_train_config(args),
        folds=args.folds,
        seed=args.seed,
        mask_token=args.mask_token,
        top_k=args.top_k,
    )
    formats = harness.REPORT_FORMATS if args.format == "all" else (args.format,)
    report = run_experiment(spec, formats=formats)
    m = report.mean_row
    print(f"mode={report.mode} folds={len(report.fold_rows)} "
          f"mean_f1={m['f1']:.4f} mean_fped={m['fped']:.4f} "
          f"mean_fned={m['fned']:.4f}")
    print(f"report in {Path(args.out) / 'report.json'}")
    return 0


def cmd_sweep_beta(args) -> int:
    lexicon, sessions, labels, swears = _load_inputs(args)
    embeddings = _embeddings_for(args, sessions, lexicon, args.seed)
    train_ids, val_ids, test_ids = _single_split(sessions, args.seed)
    cfg = replace(_train_config(args), seed=derive_seed(args.seed, "train"))
    grid = train_mod.DEFAULT_BETA_GRID
    if args.grid:
        grid = tuple(float(x) for x in args.grid.split(","))
    rows = train_mod.sweep_beta(embeddings, train_ids, val_ids, test_ids,
                                labels, swears, cfg, grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta", "f1", "fped", "fned"])
        for r in rows:
            writer.writerow([r.beta, repr(r.f1), repr(r.fped), repr(r.fned)])
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_select_layer(args) -> int:
    results = harness.read_layer_table(args.results)
    selection = select_layer(results, args.tradeoff_weight)
    for r in selection.table:
        print(f"layer={r.layer} f1={r.f1:.4f} fped={r.fped:.4f} "
              f"relative_f1={r.relative_f1:+.4f} "
              f"relative_fped={r.relative_fped:+.4f}")
    print(f"best_layer={selection.best_layer}")
    return 0


def cmd_ablation(args) -> int:
    lexicon, sessions, labels, swears = _load_inputs(args)
    embeddings = _embeddings_for(args, sessions, lexicon, args.seed)
    train_ids, val_ids, test_ids = _single_split(sessions, args.seed)
    cfg = replace(_train_config(args), seed=derive_seed(args.seed, "train"))
    variants = [args.variant] if args.variant != "all" else list(
        train_mod.ABLATION_VARIANTS)
    rows = [train_mod.run_ablation(v, embeddings, train_ids, val_ids, test_ids,
                                   labels, swears, cfg) for v in variants]
    lines = ["variant,f1,recall,precision,fped,fned"]
    for r in rows:
        lines.append(f"{r.variant},{r.f1!r},{r.recall!r},{r.precision!r},"
                     f"{r.fped!r},{r.fned!r}")
        print(f"{r.variant}: f1={r.f1:.4f} fped={r.fped:.4f} fned={r.fned:.4f}")
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbdebias",
                     description="Debiasing pipeline for session-based "
                                 "cyberbullying detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[], help="generate a synthetic corpus")
    p.add_argument("--config", required=True, help="generator JSON config")
    p.add_argument("--out", required=True, help="output dataset JSONL")
    p.add_argument("--lexicon-out", default=None, help="also write the matching lexicon")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("stats", help="swear-word distribution statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", default=None, help="output CSV (stdout if omitted)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mask", help="mask lexicon phrases in text or a dataset")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--text", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--mask-token", default=DEFAULT_MASK_TOKEN)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("encode", help="encode a dataset into per-layer embeddings")
    p.add_argument("--dataset", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("measure-bias", help="bias audit over a predictions CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_measure_bias)

    p = sub.add_parser("train", help="train on one split and save a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--embeddings", default=None, help="import embeddings JSONL")
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="full in-dataset or cross-dataset run")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target-dataset", default=None)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--mask-token", default=DEFAULT_MASK_TOKEN)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--format", default="all",
                   choices=["all", "json", "csv", "markdown"])
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep-beta", help="train/eval across a beta grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--grid", default=None,
                   help="comma-separated betas (default 0.1..1.0)")
    p.add_argument("--out", required=True, help="output CSV")
    _add_train_flags(p)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_sweep_beta)

    p = sub.add_parser("select-layer", help="pick the best layer from a table")
    p.add_argument("--results", required=True, help="layer table CSV")
    p.add_argument("--tradeoff-weight", type=float, default=1.0)
    p.set_defaults(func=cmd_select_layer)

    p = sub.add_parser("ablation", help="run an ablation variant")
    p.add_argument("--variant", required=True,
                   choices=list(train_mod.ABLATION_VARIANTS) + ["all"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--out", default=None)
    _add_train_flags(p)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_ablation)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
