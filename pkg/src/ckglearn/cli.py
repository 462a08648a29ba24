"""Command-line entry point: convert, stats, train, eval-cqa, eval-ckgc, build-index, retrieve.

Exit codes: 0 success, 1 input error, 2 runtime failure.  Commands that
produce an output directory write a ``manifest.json`` there at run end.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import torch

from .config import ConfigError, resolve_train_config
from .encoders import (
    CheckpointError,
    TokenizeError,
    encoder_fingerprint,
    load_checkpoint,
)
from .evaluation import (
    EvalConfig,
    EvaluationError,
    build_index,
    ckgc_evaluate,
    evaluate_qa,
    load_index,
    read_qa_jsonl,
    save_index,
    top_k,
)
from .manifest import RunManifest
from .sampling import SamplingConfigError
from .templates import RegistryError, builtin_registry, load_registry
from .training import TrainingError, TrainSetupError, train
from .triples import (
    Graph,
    RowError,
    TripleFileError,
    convert_graph,
    group_by_premise,
    load_triples,
    read_pairs_jsonl,
)

INPUT_ERRORS = (
    ConfigError,
    RegistryError,
    TripleFileError,
    RowError,
    EvaluationError,
    TokenizeError,
    CheckpointError,
    SamplingConfigError,
    TrainSetupError,
    FileNotFoundError,
)


def _print(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _resolve_registry(name_or_path: str):
    """A registry argument is either a file path or a builtin name."""
    path = Path(name_or_path)
    if path.exists():
        return load_registry(path)
    return builtin_registry(name_or_path)


def _eval_config(args) -> EvalConfig:
    return EvalConfig(
        similarity=args.similarity,
        max_len=args.max_len,
        batch_size=args.batch_size or 64,
    )


def _write_csv(path: Path, rows: list[dict], fieldnames: list[str]) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def cmd_convert(args) -> int:
    registry = _resolve_registry(args.registry)
    errors: list[RowError] = []
    graph = load_triples(args.triples, registry, collect_errors=errors)
    report = {
        "triples_read": len(graph),
        "pairs_written": 0,
        "errors": [{"line": e.line_no, "message": e.message} for e in errors],
    }
    if errors:
        _print(report)
        return 1

    pairs = convert_graph(graph)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            for pair in pairs:
                handle.write(json.dumps(pair.to_json(), ensure_ascii=False) + "\n")
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    report["pairs_written"] = len(pairs)
    _print(report)
    RunManifest(
        command="convert",
        seed=None,
        inputs={"triples": str(args.triples), "registry": args.registry},
        outputs={"pairs": str(out_path)},
        notes=report,
    ).write(out_path.parent)
    return 0


def cmd_stats(args) -> int:
    pairs = list(read_pairs_jsonl(args.pairs))
    if not pairs:
        raise EvaluationError(f"no pairs in {args.pairs}")
    groups = group_by_premise(pairs)
    n_alternatives = sum(len(g.alternatives) for g in groups)
    words = [len(p.premise.split()) + len(p.alternative.split()) for p in pairs]
    report = {
        "pairs": len(pairs),
        "premise_groups": len(groups),
        "avg_degree": n_alternatives / len(groups),
        "avg_words": sum(words) / (2 * len(pairs)),
    }
    _print(report)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "stats.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        RunManifest(
            command="stats", inputs={"pairs": str(args.pairs)}, outputs={"stats": str(out_dir / "stats.json")},
            notes=report,
        ).write(out_dir)
    return 0


def _load_groups(path: str):
    return group_by_premise(read_pairs_jsonl(path))


def cmd_train(args) -> int:
    extras: dict[str, str] = {}
    overrides = {
        "seed": args.seed,
        "k": args.k,
        "batch_size": args.batch_size,
        "max_len": args.max_len,
        "lr": args.lr,
        "tau": args.tau,
        "similarity": args.similarity if args.similarity != "cosine" else None,
        "backbone": args.backbone,
    }
    config = resolve_train_config(args.config, overrides, extras)
    train_pairs = args.train_pairs or extras.get("train_pairs")
    valid_pairs = args.valid_pairs or extras.get("valid_pairs")
    if not train_pairs or not valid_pairs:
        raise ConfigError("train_pairs and valid_pairs must be given (flag or config file)")
    run_dir = Path(args.run_dir or extras.get("run_dir", "runs/run"))

    torch.set_num_threads(1)  # bitwise-reproducible CPU runs
    result = train(
        config,
        _load_groups(train_pairs),
        _load_groups(valid_pairs),
        run_dir=run_dir,
        resume_from=args.resume_from,
    )
    encoder, _ = load_checkpoint(result.best_checkpoint)
    report = {
        "best_checkpoint": str(result.best_checkpoint),
        "best_valid_loss": result.best_valid_loss,
        "epochs_run": result.metrics[-1]["epoch"] if result.metrics else 0,
        "stopped_early": result.stopped_early,
    }
    _print(report)
    RunManifest(
        command="train",
        config_path=args.config,
        seed=config.seed,
        inputs={"train_pairs": str(train_pairs), "valid_pairs": str(valid_pairs)},
        outputs={"run_dir": str(run_dir), **report},
        resolved_config=asdict(config),
        checkpoint_fingerprint=encoder_fingerprint(encoder),
    ).write(run_dir)
    return 0


def cmd_eval_cqa(args) -> int:
    encoder, _ = load_checkpoint(args.checkpoint)
    cfg = _eval_config(args)
    items = read_qa_jsonl(args.qa)
    outcome = evaluate_qa(items, encoder, cfg)
    report = {"accuracy": outcome["accuracy"], "n_items": outcome["n_items"]}
    _print(report)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        _write_csv(
            out_dir / "per_query.csv",
            [
                {"item": i, "gold_index": item.gold_index, "predicted_index": pred,
                 "correct": int(pred == item.gold_index)}
                for i, (item, pred) in enumerate(zip(items, outcome["predictions"]))
            ],
            ["item", "gold_index", "predicted_index", "correct"],
        )
        RunManifest(
            command="eval-cqa",
            seed=args.seed,
            inputs={"checkpoint": str(args.checkpoint), "qa": str(args.qa)},
            outputs={"report": str(out_dir / "report.json")},
            resolved_config=asdict(cfg),
            checkpoint_fingerprint=encoder_fingerprint(encoder),
            notes=report,
        ).write(out_dir)
    return 0


def cmd_eval_ckgc(args) -> int:
    encoder, _ = load_checkpoint(args.checkpoint)
    cfg = _eval_config(args)
    registry = _resolve_registry(args.registry)
    combined = Graph(registry=registry, split="all")
    for split, path in (("train", args.train), ("valid", args.valid), ("test", args.test)):
        if path is None:
            continue
        for triple in load_triples(path, registry, split=split).triples:
            combined.add_triple(triple)
    if args.test is None:
        raise ConfigError("a test split is required")
    test_graph = load_triples(args.test, registry, split="test")
    result = ckgc_evaluate(test_graph.triples, combined, encoder, cfg, filtered=args.filtered)
    report = result.to_report()
    report["filtered"] = args.filtered
    _print(report)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        _write_csv(out_dir / "per_query.csv", result.per_query, ["direction", "premise", "gold", "rank"])
        RunManifest(
            command="eval-ckgc",
            seed=args.seed,
            inputs={"checkpoint": str(args.checkpoint), "test": str(args.test)},
            outputs={"report": str(out_dir / "report.json")},
            resolved_config=asdict(cfg),
            checkpoint_fingerprint=encoder_fingerprint(encoder),
            notes=report,
        ).write(out_dir)
    return 0


def cmd_build_index(args) -> int:
    encoder, _ = load_checkpoint(args.checkpoint)
    cfg = _eval_config(args)
    alternatives = [pair.alternative for pair in read_pairs_jsonl(args.pairs)]
    index = build_index(alternatives, encoder, cfg)
    out_path = Path(args.out)
    save_index(index, out_path)
    report = {"indexed_texts": len(index), "index": str(out_path)}
    _print(report)
    RunManifest(
        command="build-index",
        inputs={"checkpoint": str(args.checkpoint), "pairs": str(args.pairs)},
        outputs=report,
        resolved_config=asdict(cfg),
        checkpoint_fingerprint=index.fingerprint,
    ).write(out_path.parent)
    return 0


def cmd_retrieve(args) -> int:
    encoder, _ = load_checkpoint(args.checkpoint)
    cfg = _eval_config(args)
    index = load_index(args.index, encoder=encoder)
    results = top_k(args.query, index, args.top_k, encoder, cfg)
    for text, score in results:
        print(f"{score:.6f}\t{text}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out_dir / "retrieved.csv",
            [{"rank": i + 1, "score": score, "text": text} for i, (text, score) in enumerate(results)],
            ["rank", "score", "text"],
        )
        RunManifest(
            command="retrieve",
            inputs={"checkpoint": str(args.checkpoint), "index": str(args.index), "query": args.query},
            outputs={"retrieved": str(out_dir / "retrieved.csv")},
            resolved_config=asdict(cfg),
            checkpoint_fingerprint=index.fingerprint,
        ).write(out_dir)
    return 0


def _add_eval_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--similarity", choices=["cosine", "dot"], default="cosine")
    sub.add_argument("--max-len", type=int, default=32)
    sub.add_argument("--batch-size", type=int, default=None)
    sub.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ckglearn",
        description="Convert CKG triples to text pairs, train a contrastive encoder, and evaluate it.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    convert = commands.add_parser("convert", help="triples TSV -> premise/alternative pair JSONL")
    convert.add_argument("triples")
    convert.add_argument("--registry", required=True, help="registry file path or builtin name")
    convert.add_argument("--out", required=True, help="output pair JSONL path")
    convert.set_defaults(func=cmd_convert)

    stats = commands.add_parser("stats", help="summary statistics of a pair JSONL")
    stats.add_argument("pairs")
    stats.add_argument("--out", default=None, help="optional directory for stats.json")
    stats.set_defaults(func=cmd_stats)

    tr = commands.add_parser("train", help="contrastive training over converted pairs")
    tr.add_argument("--config", default=None, help="key=value run configuration file")
    tr.add_argument("--train-pairs", default=None)
    tr.add_argument("--valid-pairs", default=None)
    tr.add_argument("--run-dir", default=None)
    tr.add_argument("--resume-from", default=None, help="checkpoint to resume from")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--k", type=int, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--max-len", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--tau", type=float, default=None)
    tr.add_argument("--similarity", choices=["cosine", "dot"], default="cosine")
    tr.add_argument("--backbone", default=None)
    tr.set_defaults(func=cmd_train)

    cqa = commands.add_parser("eval-cqa", help="zero-shot multiple-choice accuracy")
    cqa.add_argument("checkpoint")
    cqa.add_argument("qa", help="QA JSONL: {query|premise+question_type, choices, gold_index}")
    cqa.add_argument("--out", default=None)
    _add_eval_flags(cqa)
    cqa.set_defaults(func=cmd_eval_cqa)

    ckgc = commands.add_parser("eval-ckgc", help="two-direction completion ranking (MRR / Hits@10)")
    ckgc.add_argument("checkpoint")
    ckgc.add_argument("--registry", required=True)
    ckgc.add_argument("--train", default=None)
    ckgc.add_argument("--valid", default=None)
    ckgc.add_argument("--test", required=True)
    ckgc.add_argument("--out", default=None)
    filt = ckgc.add_mutually_exclusive_group()
    filt.add_argument("--filtered", dest="filtered", action="store_true", default=True)
    filt.add_argument("--raw", dest="filtered", action="store_false")
    _add_eval_flags(ckgc)
    ckgc.set_defaults(func=cmd_eval_ckgc)

    bi = commands.add_parser("build-index", help="embed every alternative into a retrieval index")
    bi.add_argument("checkpoint")
    bi.add_argument("pairs", help="pair JSONL supplying the alternatives")
    bi.add_argument("--out", required=True, help="index snapshot path")
    _add_eval_flags(bi)
    bi.set_defaults(func=cmd_build_index)

    rt = commands.add_parser("retrieve", help="top-K nearest alternatives for a query")
    rt.add_argument("checkpoint")
    rt.add_argument("index")
    rt.add_argument("query")
    rt.add_argument("--top-k", type=int, default=5)
    rt.add_argument("--out", default=None)
    _add_eval_flags(rt)
    rt.set_defaults(func=cmd_retrieve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
