"""Knowledge-base and dialogue-example ingestion.

The canonical corpus format is JSONL.  A knowledge base carries one rule
text per line::

    {"id": str, "source": str, "text": str}

An example file carries one flattened dialogue state per line::

    {"utterance_id": str, "tree_id": str, "scenario": str, "question": str,
     "history": [{"follow_up_question": str, "follow_up_answer": str}],
     "answer": str, "gold_rule_id": str, "seen": bool?}

The free-text ``answer`` field is normalized into the :class:`Decision`
enumeration: a case-insensitive "yes", "no", or "irrelevant" is a decision
answer; any other non-empty string is an Inquire answer whose text is the
gold follow-up question.  Adapters for other release formats should convert
into this canonical form rather than teaching the loaders new quirks.

Everything returned by the loaders is immutable, so the resulting objects
are safe to share across threads.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import CorpusParseError, ValidationError

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class Decision(str, Enum):
    """The decision classes a dialogue state can resolve to.

    IRRELEVANT is representable for closed-book corpora but rejected by
    default in open-retrieval mode; pass ``allow_irrelevant=True`` to the
    loaders to admit it.
    """

    YES = "Yes"
    NO = "No"
    INQUIRE = "Inquire"
    IRRELEVANT = "Irrelevant"


_DECISION_ANSWERS = {
    "yes": Decision.YES,
    "no": Decision.NO,
    "irrelevant": Decision.IRRELEVANT,
}


def normalize_answer(answer: str) -> tuple[Decision, str | None]:
    """Map a raw answer string to ``(decision, gold follow-up question)``.

    Any answer that is not a recognized decision word is an Inquire answer;
    the string itself (whitespace-trimmed) becomes the gold question.
    """
    stripped = answer.strip()
    if not stripped:
        raise ValidationError("answer string is empty")
    decision = _DECISION_ANSWERS.get(stripped.lower())
    if decision is not None:
        return decision, None
    return Decision.INQUIRE, stripped


def _normalize_binary_answer(answer: str) -> str:
    stripped = answer.strip().lower()
    if stripped == "yes":
        return "Yes"
    if stripped == "no":
        return "No"
    raise ValidationError(f"follow-up answer must be Yes or No, got {answer!r}")


@dataclass(frozen=True)
class RuleText:
    """One rule text from the knowledge base."""

    id: str
    source: str
    body: str

    def __post_init__(self):
        if not self.id:
            raise ValidationError("rule id must be non-empty")
        if not self.body.strip():
            raise ValidationError(f"rule {self.id!r} has an empty body")


@dataclass(frozen=True)
class KnowledgeBase:
    """An immutable collection of rule texts keyed by id, in file order."""

    rules: dict[str, RuleText]

    @property
    def count(self) -> int:
        return len(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules.values())

    def __contains__(self, rule_id: str) -> bool:
        return rule_id in self.rules

    def rule(self, rule_id: str) -> RuleText:
        try:
            return self.rules[rule_id]
        except KeyError:
            raise ValidationError(f"unknown rule id {rule_id!r}") from None

    def ids(self) -> tuple[str, ...]:
        return tuple(self.rules)


@dataclass(frozen=True)
class DialogueTurn:
    """One follow-up question/answer exchange; the answer is canonical Yes/No."""

    follow_up_question: str
    follow_up_answer: str

    def __post_init__(self):
        if self.follow_up_answer not in ("Yes", "No"):
            raise ValidationError(
                f"dialogue turn answer must be canonical 'Yes'/'No', got {self.follow_up_answer!r}"
            )


@dataclass(frozen=True)
class Example:
    """One flattened dialogue state: where the conversation stands, and the gold outcome."""

    id: str
    tree_id: str
    scenario: str
    initial_question: str
    history: tuple[DialogueTurn, ...]
    gold_decision: Decision
    gold_question: str | None = None
    gold_rule_id: str | None = None
    seen: bool | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("example id must be non-empty")
        has_question = self.gold_question is not None
        if (self.gold_decision is Decision.INQUIRE) != has_question:
            raise ValidationError(
                f"example {self.id!r}: gold question must be present exactly when "
                f"the gold decision is Inquire (decision={self.gold_decision.value}, "
                f"question present={has_question})"
            )


def _read_jsonl(path: str | Path):
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise CorpusParseError(path, line_no, "expected a JSON object")
            yield line_no, record


def _require_str(record: dict, key: str, path: Path, line_no: int, *, allow_empty: bool = True) -> str:
    value = record.get(key)
    if not isinstance(value, str):
        raise CorpusParseError(path, line_no, f"field {key!r} must be a string")
    if not allow_empty and not value.strip():
        raise CorpusParseError(path, line_no, f"field {key!r} must be non-empty")
    return value


def load_knowledge_base(path: str | Path) -> KnowledgeBase:
    """Load a JSONL knowledge base, rejecting malformed lines and duplicate ids."""
    path = Path(path)
    rules: dict[str, RuleText] = {}
    for line_no, record in _read_jsonl(path):
        rule_id = _require_str(record, "id", path, line_no, allow_empty=False)
        source = _require_str(record, "source", path, line_no)
        body = _require_str(record, "text", path, line_no, allow_empty=False)
        if rule_id in rules:
            raise ValidationError(f"{path}:{line_no}: duplicate rule id {rule_id!r}")
        rules[rule_id] = RuleText(id=rule_id, source=source, body=body)
    return KnowledgeBase(rules=rules)


def load_examples(
    path: str | Path,
    split: str = "train",
    *,
    allow_irrelevant: bool = False,
) -> list[Example]:
    """Load a JSONL example file for the given split.

    Decision strings are normalized (see :func:`normalize_answer`); Irrelevant
    records are rejected unless ``allow_irrelevant`` is set.  Duplicate
    utterance ids are rejected so downstream evaluation batches stay unique.
    """
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
    path = Path(path)
    examples: list[Example] = []
    seen_ids: set[str] = set()
    for line_no, record in _read_jsonl(path):
        utterance_id = _require_str(record, "utterance_id", path, line_no, allow_empty=False)
        if utterance_id in seen_ids:
            raise ValidationError(f"{path}:{line_no}: duplicate utterance id {utterance_id!r}")
        seen_ids.add(utterance_id)

        tree_id = _require_str(record, "tree_id", path, line_no)
        scenario = _require_str(record, "scenario", path, line_no)
        question = _require_str(record, "question", path, line_no)
        answer = _require_str(record, "answer", path, line_no)

        raw_history = record.get("history", [])
        if not isinstance(raw_history, list):
            raise CorpusParseError(path, line_no, "field 'history' must be a list")
        turns = []
        for turn in raw_history:
            if not isinstance(turn, dict):
                raise CorpusParseError(path, line_no, "history entries must be objects")
            try:
                turns.append(
                    DialogueTurn(
                        follow_up_question=str(turn.get("follow_up_question", "")),
                        follow_up_answer=_normalize_binary_answer(
                            str(turn.get("follow_up_answer", ""))
                        ),
                    )
                )
            except ValidationError as exc:
                raise CorpusParseError(path, line_no, str(exc)) from exc

        try:
            decision, gold_question = normalize_answer(answer)
        except ValidationError as exc:
            raise CorpusParseError(path, line_no, str(exc)) from exc
        if decision is Decision.IRRELEVANT and not allow_irrelevant:
            raise ValidationError(
                f"{path}:{line_no}: Irrelevant decisions are excluded in open-retrieval mode "
                "(pass allow_irrelevant=True to admit them)"
            )

        gold_rule_id = record.get("gold_rule_id")
        if gold_rule_id is not None and not isinstance(gold_rule_id, str):
            raise CorpusParseError(path, line_no, "field 'gold_rule_id' must be a string or null")

        seen = record.get("seen")
        if seen is not None and not isinstance(seen, bool):
            raise CorpusParseError(path, line_no, "field 'seen' must be a boolean")

        examples.append(
            Example(
                id=utterance_id,
                tree_id=tree_id,
                scenario=scenario,
                initial_question=question,
                history=tuple(turns),
                gold_decision=decision,
                gold_question=gold_question,
                gold_rule_id=gold_rule_id,
                seen=seen,
            )
        )
    return examples


def answer_string(example: Example) -> str:
    """The canonical answer field for re-serialization (inverse of normalization)."""
    if example.gold_decision is Decision.INQUIRE:
        assert example.gold_question is not None
        return example.gold_question
    return example.gold_decision.value


def example_to_record(example: Example) -> dict:
    record = {
        "utterance_id": example.id,
        "tree_id": example.tree_id,
        "scenario": example.scenario,
        "question": example.initial_question,
        "history": [
            {
                "follow_up_question": turn.follow_up_question,
                "follow_up_answer": turn.follow_up_answer,
            }
            for turn in example.history
        ],
        "answer": answer_string(example),
        "gold_rule_id": example.gold_rule_id,
    }
    if example.seen is not None:
        record["seen"] = example.seen
    return record


def dump_examples(examples: Iterable[Example], path: str | Path) -> None:
    """Write examples back out in the canonical JSONL form."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(json.dumps(example_to_record(example), ensure_ascii=False))
            fh.write("\n")


@dataclass(frozen=True)
class DialogueTreeNode:
    """A node of a rooted dialogue tree.

    Internal nodes carry the follow-up question asked at that point and one
    child per canonical answer; leaves carry the final decision.
    """

    follow_up_question: str | None = None
    decision: Decision | None = None
    children: tuple[tuple[str, "DialogueTreeNode"], ...] = ()

    def __post_init__(self):
        if self.children:
            if not self.follow_up_question:
                raise ValidationError("internal tree node needs a follow-up question")
            if self.decision is not None:
                raise ValidationError("internal tree node must not carry a decision")
        else:
            if self.decision is None:
                raise ValidationError("leaf tree node needs a decision")
            if self.decision is Decision.INQUIRE:
                raise ValidationError("leaf tree node cannot decide Inquire")

    @property
    def is_leaf(self) -> bool:
        return not self.children


def flatten_dialogue_tree(
    tree: DialogueTreeNode,
    *,
    tree_id: str,
    scenario: str = "",
    initial_question: str = "",
    gold_rule_id: str | None = None,
) -> list[Example]:
    """Flatten a dialogue tree into one example per node.

    Each node becomes an example whose history is the question/answer path
    from the root to that node: internal nodes yield Inquire examples with
    the node's question as gold, leaves yield their decision.  Nodes are
    numbered in preorder (answer edges visited in declared order).
    """
    examples: list[Example] = []
    visited: set[int] = set()
    counter = 0

    def walk(node: DialogueTreeNode, history: tuple[DialogueTurn, ...]):
        nonlocal counter
        if id(node) in visited:
            raise ValidationError(f"dialogue tree {tree_id!r} contains a cycle")
        visited.add(id(node))
        example_id = f"{tree_id}-{counter}"
        counter += 1
        if node.is_leaf:
            examples.append(
                Example(
                    id=example_id,
                    tree_id=tree_id,
                    scenario=scenario,
                    initial_question=initial_question,
                    history=history,
                    gold_decision=node.decision,
                    gold_question=None,
                    gold_rule_id=gold_rule_id,
                )
            )
            return
        examples.append(
            Example(
                id=example_id,
                tree_id=tree_id,
                scenario=scenario,
                initial_question=initial_question,
                history=history,
                gold_decision=Decision.INQUIRE,
                gold_question=node.follow_up_question,
                gold_rule_id=gold_rule_id,
            )
        )
        for answer, child in node.children:
            turn = DialogueTurn(
                follow_up_question=node.follow_up_question,
                follow_up_answer=_normalize_binary_answer(answer),
            )
            walk(child, history + (turn,))

    walk(tree, ())
    return examples


def tag_seen_unseen(examples: list[Example], train_rule_ids: set[str]) -> list[Example]:
    """Mark each example as seen iff its gold rule id occurs in the training rules.

    Examples without a gold rule id stay untagged; their count is reported
    through a single warning so silent coverage gaps do not go unnoticed.
    """
    tagged = []
    missing = 0
    for example in examples:
        if example.gold_rule_id is None:
            missing += 1
            tagged.append(dataclasses.replace(example, seen=None))
        else:
            tagged.append(
                dataclasses.replace(example, seen=example.gold_rule_id in train_rule_ids)
            )
    if missing:
        log.warning("%d of %d examples have no gold rule id and were left untagged", missing, len(examples))
    return tagged
