from __future__ import annotations

import json
from pathlib import Path

import pytest

from convmr.corpus import KnowledgeBase, dump_examples
from convmr.synthetic import make_corpus


def write_kb(kb: KnowledgeBase, path: Path) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for rule in kb:
            fh.write(json.dumps({"id": rule.id, "source": rule.source, "text": rule.body}))
            fh.write("\n")
    return path


@pytest.fixture
def corpus_dir(tmp_path):
    """A synthetic knowledge base + examples written to disk; returns their paths."""
    kb, examples = make_corpus(11)
    kb_path = write_kb(kb, tmp_path / "kb.jsonl")
    data_path = tmp_path / "dev.jsonl"
    dump_examples(examples, data_path)
    return {"kb": kb_path, "data": data_path, "examples": examples, "kb_obj": kb, "dir": tmp_path}
