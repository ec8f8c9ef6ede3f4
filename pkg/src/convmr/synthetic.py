"""Deterministic synthetic corpora for tests, demos, and closure checks.

Everything here is driven by a seeded :class:`random.Random`, so a given
seed always produces the same knowledge base, dialogue trees, and flattened
examples.  Rule bodies deliberately exercise the segmenter (bullet lists,
multi-sentence lines, comma+marker clauses), and each example's scenario
and question reuse words from its gold rule so retrieval has signal.
"""

from __future__ import annotations

import random
from typing import Iterable

from .corpus import (
    Decision,
    DialogueTreeNode,
    Example,
    KnowledgeBase,
    RuleText,
    flatten_dialogue_tree,
)
from .serializer import SerializedInstance, build_target, render_target

_WORDS = (
    "benefit", "resident", "apply", "income", "support", "pension", "carer",
    "claim", "weekly", "payment", "partner", "student", "council", "housing",
    "disability", "allowance", "credit", "child", "employer", "savings",
    "visa", "training", "rate", "household", "property",
)

_QUESTION_HEADS = ("do you", "are you", "have you", "is your", "was your")


def _words(rng: random.Random, low: int, high: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randint(low, high)))


def make_question(rng: random.Random, *, max_words: int = 8) -> str:
    body = _words(rng, 1, max(1, max_words - 2))
    return f"{rng.choice(_QUESTION_HEADS)} {body}?"


def make_rule_body(rng: random.Random) -> str:
    style = rng.randrange(3)
    if style == 0:
        head = _words(rng, 2, 4).capitalize() + ":"
        items = [f"- you {_words(rng, 2, 5)}" for _ in range(rng.randint(2, 4))]
        return "\n".join([head] + items)
    if style == 1:
        return (
            f"You can {_words(rng, 1, 3)}, if you {_words(rng, 2, 4)}. "
            f"The {_words(rng, 1, 2)} is {_words(rng, 1, 2)}."
        )
    return f"{_words(rng, 3, 6).capitalize()}. {_words(rng, 4, 8).capitalize()}."


def make_knowledge_base(rng: random.Random, n_rules: int) -> KnowledgeBase:
    rules = {}
    for i in range(n_rules):
        rule_id = f"rule-{i:03d}"
        rules[rule_id] = RuleText(id=rule_id, source=f"synthetic/{rule_id}", body=make_rule_body(rng))
    return KnowledgeBase(rules=rules)


def make_tree(rng: random.Random, depth: int) -> DialogueTreeNode:
    if depth == 0 or rng.random() < 0.3:
        return DialogueTreeNode(decision=rng.choice((Decision.YES, Decision.NO)))
    children = tuple(
        (answer, make_tree(rng, depth - 1)) for answer in ("Yes", "No")[: rng.randint(1, 2)]
    )
    return DialogueTreeNode(follow_up_question=make_question(rng), children=children)


def make_corpus(
    seed: int,
    *,
    n_rules: int = 12,
    n_trees: int = 8,
    max_depth: int = 3,
) -> tuple[KnowledgeBase, list[Example]]:
    """A seeded knowledge base plus flattened examples pointing into it."""
    rng = random.Random(seed)
    kb = make_knowledge_base(rng, n_rules)
    rule_ids = list(kb.ids())
    examples: list[Example] = []
    for t in range(n_trees):
        rule_id = rng.choice(rule_ids)
        rule_words = kb.rule(rule_id).body.split()
        scenario = " ".join(rng.choice(rule_words) for _ in range(rng.randint(3, 6)))
        question = make_question(rng)
        tree = make_tree(rng, rng.randint(1, max_depth))
        examples.extend(
            flatten_dialogue_tree(
                tree,
                tree_id=f"tree-{seed}-{t}",
                scenario=scenario,
                initial_question=question,
                gold_rule_id=rule_id,
            )
        )
    return kb, examples


def perfect_table(pairs: Iterable[tuple[Example, SerializedInstance]]) -> dict[str, str]:
    """A scripted-generator table answering every input with its rendered gold target."""
    return {
        instance.input_text: render_target(build_target(example))
        for example, instance in pairs
    }


def constant_table(
    pairs: Iterable[tuple[Example, SerializedInstance]], output: str
) -> dict[str, str]:
    """A scripted-generator table answering every input with the same output."""
    return {instance.input_text: output for _, instance in pairs}
