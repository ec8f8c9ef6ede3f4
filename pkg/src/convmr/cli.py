"""Command-line interface.

Subcommands: index, retrieve, segment, export-instances, run, eval, sweep.
Exit codes: 0 on success, 2 on a validation error, 3 when the generation
failure rate exceeds the configured threshold.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import load_examples, load_knowledge_base
from .errors import ValidationError
from .harness import (
    RunConfig,
    SweepSpec,
    eval_trace,
    failure_rate,
    run_pipeline,
    sweep,
    sweep_to_json,
    sweep_to_tsv,
    write_report,
)
from .retriever import build_index, load_index, retrieve, save_index
from .segmenter import RuleSegmenter, load_markers
from .serializer import build_target, export_instances

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GENERATOR_FAILURES = 3


def _add_shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kb", help="knowledge base JSONL path")
    parser.add_argument("--data", help="examples JSONL path")
    parser.add_argument("--split", choices=("train", "dev", "test"), default="test")
    parser.add_argument("--top-m", type=int, default=8, help="retrieved rules per query")
    parser.add_argument("--max-gen-len", type=int, default=30)
    parser.add_argument("--beams", type=int, default=5)
    parser.add_argument("--generator", help="scripted:PATH | remote:HOST:PORT | remote:cmd:COMMAND")
    parser.add_argument(
        "--retrieval-mode",
        choices=("retrieve", "closed-book", "none"),
        default="retrieve",
    )
    parser.add_argument("--out", help="output file path")
    parser.add_argument("--format", choices=("json", "tsv"), default="json")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train-data", help="train split JSONL, used to tag seen/unseen")
    parser.add_argument("--markers", help="discourse-marker lexicon file")
    parser.add_argument("--trace", help="per-example trace JSONL path")
    parser.add_argument("--allow-irrelevant", action="store_true")


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name) is None:
            raise ValidationError(f"--{name.replace('_', '-')} is required for this command")


def _config(args: argparse.Namespace) -> RunConfig:
    _require(args, "kb", "data")
    return RunConfig(
        kb_path=args.kb,
        data_path=args.data,
        split=args.split,
        top_m=args.top_m,
        max_gen_len=args.max_gen_len,
        num_beams=args.beams,
        generator_spec=args.generator,
        retrieval_mode=args.retrieval_mode.replace("-", "_"),
        seed=args.seed,
        output_path=args.out,
        format=args.format,
        train_data_path=args.train_data,
        trace_path=args.trace,
        markers_path=args.markers,
        allow_irrelevant=args.allow_irrelevant,
    )


def _segmenter(args: argparse.Namespace) -> RuleSegmenter:
    if args.markers:
        return RuleSegmenter(load_markers(args.markers))
    return RuleSegmenter()


def _cmd_index(args) -> int:
    _require(args, "kb", "out")
    index = build_index(load_knowledge_base(args.kb))
    save_index(index, args.out)
    print(f"indexed {index.doc_count} rules -> {args.out}")
    return EXIT_OK


def _cmd_retrieve(args) -> int:
    _require(args, "kb")
    index = load_index(args.index) if args.index else build_index(load_knowledge_base(args.kb))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        if args.query is not None:
            results = retrieve(index, "", args.query, args.top_m)
            _write_retrieval_row(out, "query", results)
        else:
            _require(args, "data")
            for example in load_examples(args.data, args.split,
                                         allow_irrelevant=args.allow_irrelevant):
                results = retrieve(
                    index, example.scenario, example.initial_question, args.top_m
                )
                _write_retrieval_row(out, example.id, results)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _write_retrieval_row(out, key, results) -> None:
    row = {
        "id": key,
        "results": [
            {"rule_id": r.rule_id, "score": round(r.score, 6), "rank": r.rank} for r in results
        ],
    }
    out.write(json.dumps(row, ensure_ascii=False) + "\n")


def _cmd_segment(args) -> int:
    _require(args, "kb")
    segmenter = _segmenter(args)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for rule in load_knowledge_base(args.kb):
            segmented = segmenter.segment(rule)
            row = {"id": rule.id, "edus": segmented.texts()}
            out.write(json.dumps(row, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _cmd_export_instances(args) -> int:
    from .harness import prepare_instances

    config = _config(args)
    _require(args, "out")
    kb = load_knowledge_base(config.kb_path)
    examples = load_examples(config.data_path, config.split,
                             allow_irrelevant=config.allow_irrelevant)
    pairs = prepare_instances(kb, examples, config)
    count = export_instances(
        (
            (instance, build_target(example, allow_irrelevant=config.allow_irrelevant))
            for example, instance in pairs
        ),
        args.out,
    )
    print(f"exported {count} instances -> {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = _config(args)
    if config.generator_spec is None:
        raise ValidationError("--generator is required for run")
    report = run_pipeline(config)
    if config.output_path is None:
        _print_report(report, config.format)
    rate = failure_rate(report)
    if rate > config.failure_threshold:
        print(
            f"generation failure rate {rate:.4f} exceeds threshold "
            f"{config.failure_threshold:.4f}",
            file=sys.stderr,
        )
        return EXIT_GENERATOR_FAILURES
    return EXIT_OK


def _cmd_eval(args) -> int:
    _require(args, "trace")
    report = eval_trace(args.trace)
    if args.out:
        write_report(report, args.out, args.format)
    else:
        _print_report(report, args.format)
    return EXIT_OK


def _print_report(report, format: str) -> None:
    from .metrics import report_to_json, report_to_tsv

    sys.stdout.write(report_to_json(report) if format == "json" else report_to_tsv(report))


def _cmd_sweep(args) -> int:
    config = _config(args)
    if config.generator_spec is None:
        raise ValidationError("--generator is required for sweep")
    spec = SweepSpec(
        parameter=args.param.replace("-", "_"),
        values=tuple(int(v) for v in args.values.split(",")),
    )
    reports = sweep(config, spec)
    text = sweep_to_json(spec, reports) if args.format == "json" else sweep_to_tsv(spec, reports)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    worst = max(failure_rate(report) for report in reports.values())
    if worst > config.failure_threshold:
        print(f"generation failure rate {worst:.4f} exceeds threshold", file=sys.stderr)
        return EXIT_GENERATOR_FAILURES
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convmr",
        description="Open-retrieval conversational machine reading pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "index": (_cmd_index, "build and persist the TF-IDF index"),
        "retrieve": (_cmd_retrieve, "retrieve top-m rules per example or for a query"),
        "segment": (_cmd_segment, "segment every rule into discourse units"),
        "export-instances": (_cmd_export_instances, "export serialized input/target JSONL"),
        "run": (_cmd_run, "run the full pipeline and score it"),
        "eval": (_cmd_eval, "recompute metrics from a trace file"),
        "sweep": (_cmd_sweep, "run the pipeline across a parameter sweep"),
    }
    for name, (func, help_text) in commands.items():
        cmd = sub.add_parser(name, help=help_text)
        _add_shared_flags(cmd)
        cmd.set_defaults(func=func)
        if name == "retrieve":
            cmd.add_argument("--query", help="one-off query instead of --data")
            cmd.add_argument("--index", help="persisted index path (skips rebuilding)")
        if name == "sweep":
            cmd.add_argument("--param", choices=("top-m", "max-gen-len"), required=True)
            cmd.add_argument("--values", required=True, help="comma-separated integers")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
