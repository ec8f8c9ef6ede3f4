"""Decision accuracy, sentence BLEU, and the question-generation F1 score.

Decision metrics: micro accuracy is the fraction of examples whose
predicted decision matches the gold one; classwise accuracy restricts that
to one gold class; macro accuracy is the unweighted mean of the classwise
values over the classes present in the batch.

Question metrics: sentence BLEU with clipped n-gram precisions, a brevity
penalty of exp(min(0, 1 - r/c)), and no smoothing by default (any realized
n-gram precision of zero makes the score zero).  Orders longer than the
candidate are not realized and drop out of the geometric mean, so identical
candidate/reference pairs always score 1 regardless of length.  Tokens are
lowercased whitespace fields with trailing sentence punctuation split off.

The question-generation F1 combines a precision averaged over examples
whose *predicted* decision asks a question and a recall averaged over
examples whose *gold* decision asks one; an example contributes its
question BLEU when both sides ask, and zero otherwise.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .corpus import Decision
from .errors import ValidationError
from .serializer import ParsedPrediction

_TERMINAL_PUNCT = ".!?"

_CANONICAL_CLASS_ORDER = (Decision.YES, Decision.NO, Decision.INQUIRE, Decision.IRRELEVANT)


def bleu_tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokens; trailing .!? marks become their own tokens."""
    tokens: list[str] = []
    for word in text.lower().split():
        core = word.rstrip(_TERMINAL_PUNCT)
        if core:
            tokens.append(core)
        tokens.extend(word[len(core) :])
    return tokens


def clipped_ngram_counts(
    candidate: Sequence[str], reference: Sequence[str], n: int
) -> tuple[int, int]:
    """(clipped matches, candidate n-gram total) for one order."""
    cand_ngrams = Counter(tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1))
    ref_ngrams = Counter(tuple(reference[i : i + n]) for i in range(len(reference) - n + 1))
    matched = sum(min(count, ref_ngrams[gram]) for gram, count in cand_ngrams.items())
    return matched, sum(cand_ngrams.values())


def sentence_bleu(
    candidate: str,
    reference: str,
    max_n: int = 4,
    *,
    smoothing_epsilon: float | None = None,
) -> float:
    """Sentence BLEU of a candidate against a single reference.

    ``smoothing_epsilon`` substitutes a floor for zero precisions; it is
    off by default and results with it are not comparable to unsmoothed
    ones.
    """
    if not 1 <= max_n <= 4:
        raise ValidationError(f"max_n must be in 1..4, got {max_n}")
    cand_tokens = bleu_tokenize(candidate)
    ref_tokens = bleu_tokenize(reference)
    c = len(cand_tokens)
    r = len(ref_tokens)
    if c == 0:
        return 0.0

    log_precision_sum = 0.0
    orders = min(max_n, c)
    for n in range(1, orders + 1):
        matched, total = clipped_ngram_counts(cand_tokens, ref_tokens, n)
        precision = matched / total
        if precision == 0.0:
            if smoothing_epsilon is None:
                return 0.0
            precision = smoothing_epsilon
        log_precision_sum += math.log(precision)

    brevity_penalty = math.exp(min(0.0, 1.0 - r / c))
    return brevity_penalty * math.exp(log_precision_sum / orders)


@dataclass(frozen=True)
class PairedResult:
    """One evaluated example: gold decision/question against a parsed prediction."""

    example_id: str
    gold_decision: Decision
    gold_question: str | None
    pred: ParsedPrediction
    seen: bool | None = None


@dataclass(frozen=True)
class F1BleuScore:
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    micro: float
    macro: float
    classwise: dict[Decision, float]
    f1_bleu1: F1BleuScore
    f1_bleu4: F1BleuScore
    counts: dict[Decision, dict[Decision, int]]
    n_examples: int
    parse_warnings: int = 0
    empty_gold_questions: int = 0
    n_failed: int = 0
    subsets: dict[str, "EvalReport"] | None = None


def _check_unique_ids(results: Sequence[PairedResult]) -> None:
    ids = [result.example_id for result in results]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate example ids in the evaluation batch")


def decision_accuracy(
    results: Sequence[PairedResult],
) -> tuple[float, float, dict[Decision, float]]:
    """(micro, macro, classwise) accuracy of the predicted decisions."""
    if not results:
        raise ValidationError("cannot compute accuracy over an empty batch")
    correct_by_class: Counter[Decision] = Counter()
    total_by_class: Counter[Decision] = Counter()
    for result in results:
        total_by_class[result.gold_decision] += 1
        if result.pred.decision is result.gold_decision:
            correct_by_class[result.gold_decision] += 1

    micro = sum(correct_by_class.values()) / len(results)
    classwise = {
        decision: correct_by_class[decision] / total_by_class[decision]
        for decision in _CANONICAL_CLASS_ORDER
        if total_by_class[decision]
    }
    macro = sum(classwise.values()) / len(classwise)
    return micro, macro, classwise


def _question_bleu(result: PairedResult, max_n: int) -> float:
    return sentence_bleu(result.pred.question or "", result.gold_question or "", max_n)


def f1_bleu(results: Sequence[PairedResult], max_n: int) -> F1BleuScore:
    """Question-generation F1 at the given BLEU order.

    Precision averages over predicted-Inquire examples (zero when the gold
    decision is not Inquire); recall averages over gold-Inquire examples
    (zero when the prediction is not Inquire).  An empty denominator makes
    the corresponding side zero, and F1 is zero when both sides are.
    """
    if not results:
        raise ValidationError("cannot compute F1 over an empty batch")
    precision_terms = []
    recall_terms = []
    for result in results:
        pred_inquire = result.pred.decision is Decision.INQUIRE
        gold_inquire = result.gold_decision is Decision.INQUIRE
        both = pred_inquire and gold_inquire
        bleu = _question_bleu(result, max_n) if both else 0.0
        if pred_inquire:
            precision_terms.append(bleu)
        if gold_inquire:
            recall_terms.append(bleu)

    precision = sum(precision_terms) / len(precision_terms) if precision_terms else 0.0
    recall = sum(recall_terms) / len(recall_terms) if recall_terms else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return F1BleuScore(precision=precision, recall=recall, f1=f1)


def evaluate(
    results: Sequence[PairedResult],
    *,
    with_subsets: bool = False,
    n_failed: int = 0,
) -> EvalReport:
    """Full evaluation of a batch; optionally adds seen/unseen subset reports."""
    _check_unique_ids(results)
    micro, macro, classwise = decision_accuracy(results)

    counts: dict[Decision, dict[Decision, int]] = {}
    parse_warnings = 0
    empty_gold_questions = 0
    for result in results:
        row = counts.setdefault(result.gold_decision, {})
        row[result.pred.decision] = row.get(result.pred.decision, 0) + 1
        if result.pred.warning:
            parse_warnings += 1
        if result.gold_decision is Decision.INQUIRE and not result.gold_question:
            empty_gold_questions += 1

    subsets = None
    if with_subsets:
        subsets = {}
        for name, flag in (("seen", True), ("unseen", False)):
            members = [result for result in results if result.seen is flag]
            subsets[name] = evaluate(members) if members else None

    return EvalReport(
        micro=micro,
        macro=macro,
        classwise=classwise,
        f1_bleu1=f1_bleu(results, 1),
        f1_bleu4=f1_bleu(results, 4),
        counts=counts,
        n_examples=len(results),
        parse_warnings=parse_warnings,
        empty_gold_questions=empty_gold_questions,
        n_failed=n_failed,
        subsets=subsets,
    )


def _round6(value: float) -> float:
    return round(value, 6)


def _f1_to_dict(score: F1BleuScore) -> dict:
    return {
        "precision": _round6(score.precision),
        "recall": _round6(score.recall),
        "f1": _round6(score.f1),
    }


def report_to_dict(report: EvalReport) -> dict:
    """Canonical JSON shape of a report; floats carry six decimal places."""
    decisions = [Decision.YES, Decision.NO, Decision.INQUIRE]
    if Decision.IRRELEVANT in report.classwise:
        decisions.append(Decision.IRRELEVANT)
    classwise = {
        decision.value.lower(): (
            _round6(report.classwise[decision]) if decision in report.classwise else None
        )
        for decision in decisions
    }
    payload = {
        "micro": _round6(report.micro),
        "macro": _round6(report.macro),
        "classwise": classwise,
        "f1_bleu1": _f1_to_dict(report.f1_bleu1),
        "f1_bleu4": _f1_to_dict(report.f1_bleu4),
        "counts": {
            gold.value.lower(): {pred.value.lower(): n for pred, n in row.items()}
            for gold, row in report.counts.items()
        },
        "n_examples": report.n_examples,
        "n_failed": report.n_failed,
        "parse_warnings": report.parse_warnings,
        "empty_gold_questions": report.empty_gold_questions,
    }
    if report.subsets is not None:
        payload["subsets"] = {
            name: (report_to_dict(sub) if sub is not None else None)
            for name, sub in report.subsets.items()
        }
    return payload


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report_to_dict(report), ensure_ascii=False, indent=2) + "\n"


_TSV_COLUMNS = ("micro", "macro", "f1_bleu1", "f1_bleu4")


def _tsv_row(label: str, report: EvalReport | None) -> str:
    if report is None:
        return "\t".join([label] + ["-"] * len(_TSV_COLUMNS))
    values = (report.micro, report.macro, report.f1_bleu1.f1, report.f1_bleu4.f1)
    return "\t".join([label] + [f"{value:.6f}" for value in values])


def report_to_tsv(report: EvalReport) -> str:
    """One row per subset (full, then seen/unseen when present), one column per metric."""
    lines = ["subset\t" + "\t".join(_TSV_COLUMNS), _tsv_row("full", report)]
    if report.subsets is not None:
        for name in ("seen", "unseen"):
            lines.append(_tsv_row(name, report.subsets.get(name)))
    return "\n".join(lines) + "\n"
