"""End-to-end pipeline: ingest, index, retrieve, segment, serialize, generate, score.

A run processes every example exactly once, writes a per-example trace (the
only place question-score disputes can be settled from), and produces an
evaluation report with full/seen/unseen breakdowns.  Examples whose
generation fails after retries are excluded from the metrics and counted;
the CLI turns a failure rate above the threshold into a dedicated exit
status so transport problems never masquerade as model quality.

Three retrieval modes cover the ablation settings: ``retrieve`` uses the
top-m TF-IDF rules, ``closed_book`` injects only the gold rule, and
``none`` serializes without any rules.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import (
    Decision,
    Example,
    KnowledgeBase,
    load_examples,
    load_knowledge_base,
    tag_seen_unseen,
)
from .errors import (
    GenerationError,
    GeneratorFailureError,
    TransportError,
    ValidationError,
)
from .generation import (
    DEFAULT_MAX_LENGTH,
    DEFAULT_NUM_BEAMS,
    GenerationParams,
    Generator,
    ModelOutput,
    resolve_generator,
)
from .metrics import (
    EvalReport,
    PairedResult,
    evaluate,
    report_to_json,
    report_to_tsv,
    sentence_bleu,
)
from .retriever import build_index, retrieve
from .segmenter import RuleSegmenter, SegmentedRule, Segmenter
from .serializer import (
    ParsedPrediction,
    SerializedInstance,
    build_input,
    parse_output,
)

log = logging.getLogger(__name__)

RETRIEVAL_MODES = ("retrieve", "closed_book", "none")
SWEEP_PARAMETERS = ("top_m", "max_gen_len")

DEFAULT_TOP_M = 8
DEFAULT_FAILURE_THRESHOLD = 0.01


@dataclass
class RunConfig:
    kb_path: str | Path
    data_path: str | Path
    split: str = "test"
    top_m: int = DEFAULT_TOP_M
    max_gen_len: int = DEFAULT_MAX_LENGTH
    num_beams: int = DEFAULT_NUM_BEAMS
    generator_spec: str | None = None
    retrieval_mode: str = "retrieve"
    seed: int = 0
    output_path: str | Path | None = None
    format: str = "json"
    train_data_path: str | Path | None = None
    trace_path: str | Path | None = None
    markers_path: str | Path | None = None
    allow_irrelevant: bool = False
    max_retries: int = 2
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD

    def __post_init__(self):
        if self.retrieval_mode not in RETRIEVAL_MODES:
            raise ValidationError(
                f"retrieval_mode must be one of {RETRIEVAL_MODES}, got {self.retrieval_mode!r}"
            )
        if self.format not in ("json", "tsv"):
            raise ValidationError(f"format must be json or tsv, got {self.format!r}")
        if self.top_m < 1:
            raise ValidationError(f"top_m must be >= 1, got {self.top_m}")

    def generation_params(self) -> GenerationParams:
        return GenerationParams(max_length=self.max_gen_len, num_beams=self.num_beams)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[int, ...]

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValidationError(
                f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {self.parameter!r}"
            )
        if not self.values:
            raise ValidationError("sweep needs at least one value")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValidationError(f"sweep values must be strictly increasing, got {self.values}")


def _segmenter_from_config(config: RunConfig) -> Segmenter:
    if config.markers_path is None:
        return RuleSegmenter()
    from .segmenter import load_markers

    return RuleSegmenter(load_markers(config.markers_path))


def prepare_instances(
    kb: KnowledgeBase,
    examples: Sequence[Example],
    config: RunConfig,
    segmenter: Segmenter | None = None,
) -> list[tuple[Example, SerializedInstance]]:
    """Serialize every example under the configured retrieval mode."""
    segmenter = segmenter or _segmenter_from_config(config)
    segmented: dict[str, SegmentedRule] = {}

    def segment_rule(rule_id: str) -> SegmentedRule:
        if rule_id not in segmented:
            segmented[rule_id] = segmenter.segment(kb.rule(rule_id))
        return segmented[rule_id]

    pairs: list[tuple[Example, SerializedInstance]] = []
    if config.retrieval_mode == "retrieve":
        index = build_index(kb)
        for example in examples:
            results = retrieve(index, example.scenario, example.initial_question, config.top_m)
            rules = [segment_rule(result.rule_id) for result in results]
            pairs.append((example, build_input(example, rules)))
    elif config.retrieval_mode == "closed_book":
        for example in examples:
            if example.gold_rule_id is None:
                raise ValidationError(
                    f"example {example.id!r} has no gold rule id; closed-book mode needs one"
                )
            rules = [segment_rule(example.gold_rule_id)]
            pairs.append((example, build_input(example, rules)))
    else:
        for example in examples:
            pairs.append((example, build_input(example, [], allow_empty_rules=True)))
    return pairs


@dataclass
class ExampleTrace:
    example: Example
    instance: SerializedInstance
    output: ModelOutput | None = None
    pred: ParsedPrediction | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _trace_row(trace: ExampleTrace) -> dict:
    example = trace.example
    if trace.failed:
        return {"id": example.id, "status": "failed", "error": trace.error}
    pred = trace.pred
    both_inquire = (
        pred.decision is Decision.INQUIRE and example.gold_decision is Decision.INQUIRE
    )
    return {
        "id": example.id,
        "status": "ok",
        "seen": example.seen,
        "gold_decision": example.gold_decision.value,
        "gold_question": example.gold_question,
        "input": trace.instance.input_text,
        "retrieved_rule_ids": list(trace.instance.retrieved_rule_ids),
        "output": trace.output.text,
        "truncated": trace.output.truncated,
        "pred_decision": pred.decision.value,
        "pred_question": pred.question,
        "parse_warning": pred.warning,
        "bleu1": (
            round(sentence_bleu(pred.question or "", example.gold_question or "", 1), 6)
            if both_inquire
            else None
        ),
        "bleu4": (
            round(sentence_bleu(pred.question or "", example.gold_question or "", 4), 6)
            if both_inquire
            else None
        ),
    }


def write_trace(traces: Sequence[ExampleTrace], path: str | Path) -> None:
    rows = sorted((_trace_row(trace) for trace in traces), key=lambda row: row["id"])
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")


def _generate_with_retries(
    generator: Generator,
    instance: SerializedInstance,
    params: GenerationParams,
    max_retries: int,
) -> ModelOutput:
    attempts = max_retries + 1
    last_error: Exception | None = None
    for _ in range(attempts):
        try:
            return generator.generate(instance, params)
        except TransportError as exc:
            last_error = exc
    raise last_error


def _paired_result(trace: ExampleTrace) -> PairedResult:
    return PairedResult(
        example_id=trace.example.id,
        gold_decision=trace.example.gold_decision,
        gold_question=trace.example.gold_question,
        pred=trace.pred,
        seen=trace.example.seen,
    )


def run_pipeline(config: RunConfig, generator: Generator | None = None) -> EvalReport:
    """Run the full pipeline; returns the report (failed examples excluded, counted)."""
    if generator is None:
        if config.generator_spec is None:
            raise ValidationError("run_pipeline needs a generator or a generator spec")
        generator = resolve_generator(config.generator_spec)

    kb = load_knowledge_base(config.kb_path)
    examples = load_examples(
        config.data_path, config.split, allow_irrelevant=config.allow_irrelevant
    )
    if config.train_data_path is not None:
        train_examples = load_examples(config.train_data_path, "train",
                                       allow_irrelevant=config.allow_irrelevant)
        train_rule_ids = {e.gold_rule_id for e in train_examples if e.gold_rule_id}
        examples = tag_seen_unseen(examples, train_rule_ids)

    pairs = prepare_instances(kb, examples, config)
    report, traces = score_pairs(pairs, generator, config)

    if config.trace_path is not None:
        write_trace(traces, config.trace_path)
    if config.output_path is not None:
        write_report(report, config.output_path, config.format)
    return report


def score_pairs(
    pairs: Sequence[tuple[Example, SerializedInstance]],
    generator: Generator,
    config: RunConfig,
) -> tuple[EvalReport, list[ExampleTrace]]:
    """Generate, parse, and score prepared instances."""
    params = config.generation_params()
    traces: list[ExampleTrace] = []
    for example, instance in pairs:
        trace = ExampleTrace(example=example, instance=instance)
        try:
            trace.output = _generate_with_retries(
                generator, instance, params, config.max_retries
            )
        except (TransportError, GenerationError) as exc:
            trace.error = str(exc) or type(exc).__name__
            log.warning("generation failed for %s: %s", example.id, trace.error)
        else:
            trace.pred = parse_output(trace.output.text, allow_irrelevant=config.allow_irrelevant)
        traces.append(trace)

    scored = [trace for trace in traces if not trace.failed]
    n_failed = len(traces) - len(scored)
    if not scored:
        raise GeneratorFailureError("every example failed generation; nothing to score")
    report = evaluate(
        [_paired_result(trace) for trace in scored],
        with_subsets=True,
        n_failed=n_failed,
    )
    return report, traces


def failure_rate(report: EvalReport) -> float:
    total = report.n_examples + report.n_failed
    return report.n_failed / total if total else 0.0


def write_report(report: EvalReport, path: str | Path, format: str) -> None:
    text = report_to_json(report) if format == "json" else report_to_tsv(report)
    Path(path).write_text(text, encoding="utf-8")


def eval_trace(path: str | Path) -> EvalReport:
    """Recompute the evaluation report offline from a trace file."""
    results: list[PairedResult] = []
    n_failed = 0
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            if row.get("status") == "failed":
                n_failed += 1
                continue
            pred = ParsedPrediction(
                decision=Decision(row["pred_decision"]),
                question=row.get("pred_question"),
                raw=row.get("output", ""),
                warning=bool(row.get("parse_warning", False)),
            )
            results.append(
                PairedResult(
                    example_id=row["id"],
                    gold_decision=Decision(row["gold_decision"]),
                    gold_question=row.get("gold_question"),
                    pred=pred,
                    seen=row.get("seen"),
                )
            )
    if not results:
        raise ValidationError(f"trace {path} holds no scoreable rows")
    return evaluate(results, with_subsets=True, n_failed=n_failed)


def sweep(
    config: RunConfig,
    spec: SweepSpec,
    generator: Generator | None = None,
) -> dict[int, EvalReport]:
    """One full pipeline run per parameter value, everything else held fixed."""
    reports: dict[int, EvalReport] = {}
    for value in spec.values:
        run_config = dataclasses.replace(
            config,
            output_path=None,
            trace_path=None,
            **{spec.parameter: value},
        )
        reports[value] = run_pipeline(run_config, generator)
    return reports


_SWEEP_METRICS = ("micro", "macro", "f1_bleu1", "f1_bleu4")
_SWEEP_SUBSETS = ("full", "seen", "unseen")


def _subset_report(report: EvalReport, subset: str) -> EvalReport | None:
    if subset == "full":
        return report
    if report.subsets is None:
        return None
    return report.subsets.get(subset)


def _metric_value(report: EvalReport | None, metric: str) -> float | None:
    if report is None:
        return None
    if metric == "micro":
        return report.micro
    if metric == "macro":
        return report.macro
    if metric == "f1_bleu1":
        return report.f1_bleu1.f1
    return report.f1_bleu4.f1


def sweep_to_tsv(spec: SweepSpec, reports: dict[int, EvalReport]) -> str:
    """Subset rows by metric-at-value columns, shaped like the sweep tables."""
    header = ["subset"] + [
        f"{metric}@{value}" for metric in _SWEEP_METRICS for value in spec.values
    ]
    lines = ["\t".join(header)]
    for subset in _SWEEP_SUBSETS:
        cells = [subset]
        for metric in _SWEEP_METRICS:
            for value in spec.values:
                metric_value = _metric_value(_subset_report(reports[value], subset), metric)
                cells.append("-" if metric_value is None else f"{metric_value:.6f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def sweep_to_json(spec: SweepSpec, reports: dict[int, EvalReport]) -> str:
    from .metrics import report_to_dict

    payload = {
        "parameter": spec.parameter,
        "values": list(spec.values),
        "reports": {str(value): report_to_dict(reports[value]) for value in spec.values},
    }
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


def classwise_trace(reports: Sequence[EvalReport]) -> list[tuple[int, str, float]]:
    """(checkpoint, class, accuracy) rows from a series of per-checkpoint reports."""
    rows: list[tuple[int, str, float]] = []
    for checkpoint, report in enumerate(reports):
        for decision, accuracy in report.classwise.items():
            rows.append((checkpoint, decision.value.lower(), accuracy))
    return rows


def classwise_trace_csv(reports: Sequence[EvalReport]) -> str:
    lines = ["checkpoint,class,accuracy"]
    for checkpoint, cls, accuracy in classwise_trace(reports):
        lines.append(f"{checkpoint},{cls},{accuracy:.6f}")
    return "\n".join(lines) + "\n"
