"""Unigram+bigram TF-IDF retrieval over a rule-text knowledge base.

Terms are lowercase alphanumeric runs plus adjacent-token bigrams.  The
weighting is log-scaled term frequency with a clipped Robertson-style
inverse document frequency:

    tf(t, d)  = ln(1 + count(t, d))
    idf(t)    = max(0, ln((N - df(t) + 0.5) / (df(t) + 0.5)))

Queries are weighted with the same scheme over the index statistics (terms
unseen at build time contribute nothing), and documents are scored by the
sparse dot product.  Ties break on ascending rule id so rankings are
deterministic across runs, platforms, and knowledge-base insertion orders.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import KnowledgeBase
from .errors import ValidationError

INDEX_FORMAT_VERSION = 1

# alphanumeric runs; underscore is punctuation here, not a word character
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_PAIR_SEP = " "


@dataclass(frozen=True)
class Term:
    """A unigram token or an adjacent-token bigram (surface joined by a space)."""

    surface: str
    arity: int

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise ValidationError(f"term arity must be 1 or 2, got {self.arity}")
        if self.arity == 1 and _PAIR_SEP in self.surface:
            raise ValidationError(f"unigram surface contains the pair separator: {self.surface!r}")


def tokenize_ngrams(text: str) -> list[Term]:
    """Lowercase, split on non-alphanumeric runs, emit all unigrams then all bigrams."""
    words = _TOKEN_RE.findall(text.lower())
    terms = [Term(word, 1) for word in words]
    terms.extend(Term(f"{a}{_PAIR_SEP}{b}", 2) for a, b in zip(words, words[1:]))
    return terms


def idf(document_frequency: int, doc_count: int) -> float:
    return max(0.0, math.log((doc_count - document_frequency + 0.5) / (document_frequency + 0.5)))


@dataclass(frozen=True)
class Index:
    """Immutable TF-IDF index: document count, document frequencies, and doc vectors."""

    doc_count: int
    df: dict[Term, int]
    doc_vectors: dict[str, dict[Term, float]]

    @property
    def vocabulary(self) -> frozenset[Term]:
        return frozenset(self.df)

    def __post_init__(self):
        for term, frequency in self.df.items():
            if not 0 < frequency <= self.doc_count:
                raise ValidationError(
                    f"df({term.surface!r}) = {frequency} outside (0, {self.doc_count}]"
                )
        for rule_id, vector in self.doc_vectors.items():
            for term, weight in vector.items():
                if not math.isfinite(weight) or weight < 0:
                    raise ValidationError(
                        f"weight of {term.surface!r} in {rule_id!r} is not a finite non-negative number"
                    )


@dataclass(frozen=True)
class RetrievalResult:
    rule_id: str
    score: float
    rank: int


def build_index(kb: KnowledgeBase) -> Index:
    """Build the TF-IDF index over a non-empty knowledge base."""
    if kb.count == 0:
        raise ValidationError("cannot build an index over an empty knowledge base")

    doc_term_counts: dict[str, Counter[Term]] = {}
    df: Counter[Term] = Counter()
    for rule in kb:
        counts = Counter(tokenize_ngrams(rule.body))
        doc_term_counts[rule.id] = counts
        df.update(counts.keys())

    doc_count = kb.count
    doc_vectors: dict[str, dict[Term, float]] = {}
    for rule_id, counts in doc_term_counts.items():
        doc_vectors[rule_id] = {
            term: math.log(1 + count) * idf(df[term], doc_count)
            for term, count in counts.items()
        }
    return Index(doc_count=doc_count, df=dict(df), doc_vectors=doc_vectors)


def query_vector(index: Index, query_text: str) -> dict[Term, float]:
    """Weight the query with the index's statistics; unknown terms drop out."""
    counts = Counter(tokenize_ngrams(query_text))
    vector = {}
    for term, count in counts.items():
        frequency = index.df.get(term)
        if frequency is None:
            continue
        vector[term] = math.log(1 + count) * idf(frequency, index.doc_count)
    return vector


def retrieve(
    index: Index,
    scenario: str,
    initial_question: str,
    m: int,
) -> list[RetrievalResult]:
    """Score every document against the scenario+question query; return the top min(m, N).

    Scores are dot products accumulated in query-term order, so a persisted
    and reloaded index reproduces them bit for bit.
    """
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    vector = query_vector(index, f"{scenario} {initial_question}")

    scores: dict[str, float] = {}
    for rule_id, doc_vector in index.doc_vectors.items():
        score = 0.0
        for term, weight in vector.items():
            doc_weight = doc_vector.get(term)
            if doc_weight is not None:
                score += weight * doc_weight
        scores[rule_id] = score

    ranked = sorted(scores, key=lambda rule_id: (-scores[rule_id], rule_id))
    top = ranked[: min(m, index.doc_count)]
    return [
        RetrievalResult(rule_id=rule_id, score=scores[rule_id], rank=rank)
        for rank, rule_id in enumerate(top, start=1)
    ]


def _term_to_list(term: Term) -> list:
    return [term.surface, term.arity]


def save_index(index: Index, path: str | Path) -> None:
    """Persist the index as JSON; floats round-trip exactly through repr."""
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "doc_count": index.doc_count,
        "df": [[term.surface, term.arity, freq] for term, freq in index.df.items()],
        "doc_vectors": {
            rule_id: [[term.surface, term.arity, weight] for term, weight in vector.items()]
            for rule_id, vector in index.doc_vectors.items()
        },
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_index(path: str | Path) -> Index:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise ValidationError(f"unsupported index format version: {version!r}")
    df = {Term(surface, arity): freq for surface, arity, freq in payload["df"]}
    doc_vectors = {
        rule_id: {Term(surface, arity): weight for surface, arity, weight in vector}
        for rule_id, vector in payload["doc_vectors"].items()
    }
    return Index(doc_count=payload["doc_count"], df=df, doc_vectors=doc_vectors)
