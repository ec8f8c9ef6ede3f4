"""Flat-text serialization between dialogue state and generator output.

Input template (single spaces, no trailing whitespace)::

    [QU] {question} [SEP] [SC] {scenario} [SEP]
    [FUQ] {q_1} [FUA] {a_1} ... [FUQ] {q_n} [FUA] {a_n}
    [SN] [EDU] {unit} [EDU] {unit} ... [SN] [EDU] {unit} ...

with one [SN] block per retrieved rule in rank order.  Targets are the
decision word alone ("Yes"/"No") or "Inquire" followed by the follow-up
question.  Parsing mirrors that: the first whitespace-delimited word of the
generator output (case-insensitive, trailing punctuation ignored) is the
decision; for Inquire the rest of the string is the question.  A first word
that matches no decision falls back to Inquire with the full output as the
question and a warning flag, so evaluation stays total over arbitrary
generator output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Decision, Example
from .errors import ValidationError
from .segmenter import SegmentedRule

QU = "[QU]"
SEP = "[SEP]"
SC = "[SC]"
FUQ = "[FUQ]"
FUA = "[FUA]"
SN = "[SN]"
EDU_MARKER = "[EDU]"
EOS_MARKER = "[EOS]"

SPECIAL_TOKENS = (QU, SEP, SC, FUQ, FUA, SN, EDU_MARKER)

_DECISION_WORDS = {
    "yes": Decision.YES,
    "no": Decision.NO,
    "inquire": Decision.INQUIRE,
}

_TRAILING_PUNCT = ".,!?;:"


@dataclass(frozen=True)
class SerializedInstance:
    """One flat model input plus the rule ids it was built from."""

    example_id: str
    input_text: str
    retrieved_rule_ids: tuple[str, ...]


@dataclass(frozen=True)
class TargetSequence:
    """The label for one example: decision word, optional question, terminal marker."""

    decision_token: str
    question_text: str | None = None
    terminal: str = EOS_MARKER

    def __post_init__(self):
        has_question = self.question_text is not None
        if (self.decision_token == Decision.INQUIRE.value) != has_question:
            raise ValidationError(
                "target question must be present exactly when the decision token is Inquire"
            )

    def render(self) -> str:
        """The textual target (terminal marker excluded; that is the tokenizer's job)."""
        if self.question_text:
            return f"{self.decision_token} {self.question_text}"
        return self.decision_token

    def tokens(self) -> list[str]:
        """Whitespace tokens of the target including the terminal marker."""
        parts = [self.decision_token]
        if self.question_text:
            parts.extend(self.question_text.split())
        parts.append(self.terminal)
        return parts


@dataclass(frozen=True)
class ParsedPrediction:
    """Decision and optional question extracted from raw generator output."""

    decision: Decision
    question: str | None
    raw: str
    warning: bool = False
    trailing_discarded: bool = False

    def __post_init__(self):
        if self.question is not None and self.decision is not Decision.INQUIRE:
            raise ValidationError("parsed question is only allowed for Inquire decisions")


def build_input(
    example: Example,
    rules: Sequence[SegmentedRule],
    *,
    allow_empty_rules: bool = False,
) -> SerializedInstance:
    """Serialize a dialogue state and its retrieved, segmented rules into one string."""
    if not rules and not allow_empty_rules:
        raise ValidationError(
            f"example {example.id!r}: no rules to serialize "
            "(only the no-retrieval mode may build rule-less inputs)"
        )
    parts: list[str] = [QU, example.initial_question, SEP, SC, example.scenario, SEP]
    for turn in example.history:
        parts.extend((FUQ, turn.follow_up_question, FUA, turn.follow_up_answer))
    for rule in rules:
        parts.append(SN)
        for edu in rule.edus:
            parts.extend((EDU_MARKER, edu.text))
    input_text = " ".join(part for part in parts if part)
    return SerializedInstance(
        example_id=example.id,
        input_text=input_text,
        retrieved_rule_ids=tuple(rule.rule_id for rule in rules),
    )


def build_target(example: Example, *, allow_irrelevant: bool = False) -> TargetSequence:
    """Build the training/evaluation target for an example."""
    if example.gold_decision is Decision.IRRELEVANT:
        if not allow_irrelevant:
            raise ValidationError(
                f"example {example.id!r}: Irrelevant targets are excluded in open-retrieval mode"
            )
        return TargetSequence(decision_token=Decision.IRRELEVANT.value)
    if example.gold_decision is Decision.INQUIRE:
        return TargetSequence(
            decision_token=Decision.INQUIRE.value, question_text=example.gold_question
        )
    return TargetSequence(decision_token=example.gold_decision.value)


def render_target(target: TargetSequence) -> str:
    return target.render()


def parse_output(output_text: str, *, allow_irrelevant: bool = False) -> ParsedPrediction:
    """Extract the decision (and question, for Inquire) from generator output.

    The first whitespace-delimited word decides; trailing text after a
    Yes/No decision is discarded but flagged.  Unknown first words fall back
    to Inquire with the whole string as the question, with the warning flag
    set, so no generator output ever fails to evaluate.
    """
    stripped = output_text.strip()
    head, _, rest = _split_first_word(stripped)
    word = head.rstrip(_TRAILING_PUNCT).lower()

    decision = _DECISION_WORDS.get(word)
    if decision is None and allow_irrelevant and word == "irrelevant":
        decision = Decision.IRRELEVANT

    if decision is None:
        return ParsedPrediction(
            decision=Decision.INQUIRE,
            question=stripped,
            raw=output_text,
            warning=True,
        )
    if decision is Decision.INQUIRE:
        return ParsedPrediction(
            decision=decision,
            question=rest.strip() if rest else "",
            raw=output_text,
        )
    return ParsedPrediction(
        decision=decision,
        question=None,
        raw=output_text,
        trailing_discarded=bool(rest.strip()),
    )


def _split_first_word(text: str) -> tuple[str, str, str]:
    fields = text.split(None, 1)
    if not fields:
        return "", "", ""
    if len(fields) == 1:
        return fields[0], "", ""
    return fields[0], " ", fields[1]


def instance_record(instance: SerializedInstance, target: TargetSequence) -> dict:
    return {"id": instance.example_id, "input": instance.input_text, "target": target.render()}


def export_instances(
    pairs: Iterable[tuple[SerializedInstance, TargetSequence]],
    path: str | Path,
) -> int:
    """Write {"id", "input", "target"} JSONL for offline fine-tuning; returns the row count."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for instance, target in pairs:
            fh.write(json.dumps(instance_record(instance, target), ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count
