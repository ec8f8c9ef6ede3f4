"""Rule-text segmentation into clause-level units.

A rule body is split by three ordered passes:

1. hard breaks at newlines, so bullet and numbered list items become their
   own units (markers like ``-``, ``*``, or ``3.`` stay with their item);
2. sentence breaks after a run of ``.``/``!``/``?`` followed by whitespace,
   except when everything before the run is a bare item number;
3. clause breaks in front of a discourse marker (``if``, ``unless``,
   ``when``, ``while``, ``and``, ``or``, ``but``, ``because``,
   ``although`` by default) when the marker follows a comma or semicolon.

Splits never drop characters, only the whitespace at the cut, so joining a
rule's units with single spaces reproduces the whitespace-normalized body,
and re-segmenting any emitted unit returns that unit unchanged.

The marker lexicon is a plain-text config (one marker per line); pass a
different lexicon to the constructor or the CLI to change pass 3.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

from .corpus import RuleText
from .errors import ValidationError

DEFAULT_MARKERS = (
    "if",
    "unless",
    "when",
    "while",
    "and",
    "or",
    "but",
    "because",
    "although",
)

_TERMINATOR_RE = re.compile(r"[.!?]+(?=\s)")


@dataclass(frozen=True)
class EDU:
    """One elementary discourse unit: a clause-level span of a rule text."""

    text: str
    index: int

    def __post_init__(self):
        if not self.text:
            raise ValidationError("EDU text must be non-empty")


@dataclass(frozen=True)
class SegmentedRule:
    rule_id: str
    edus: tuple[EDU, ...]

    @property
    def n_units(self) -> int:
        return len(self.edus)

    def texts(self) -> list[str]:
        return [edu.text for edu in self.edus]

    def __post_init__(self):
        if not self.edus:
            raise ValidationError(f"segmented rule {self.rule_id!r} has no units")


class Segmenter(Protocol):
    """Anything that can split a rule text into discourse units."""

    def segment(self, rule: RuleText) -> SegmentedRule: ...


def load_markers(path: str | Path) -> tuple[str, ...]:
    """Read a marker lexicon: one marker per line, blank lines and # comments skipped."""
    markers = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            markers.append(stripped.lower())
    if not markers:
        raise ValidationError(f"marker lexicon {path} is empty")
    return tuple(markers)


def default_markers_path() -> Path:
    return Path(__file__).parent / "data" / "discourse_markers.txt"


class RuleSegmenter:
    """Deterministic rule-based segmenter (pure function of its input)."""

    def __init__(self, markers: Iterable[str] = DEFAULT_MARKERS):
        marker_set = sorted({m.strip().lower() for m in markers if m.strip()}, key=len, reverse=True)
        if not marker_set:
            raise ValidationError("marker lexicon is empty")
        self.markers = tuple(marker_set)
        alternatives = "|".join(re.escape(m) for m in marker_set)
        self._clause_re = re.compile(rf"([,;])\s*(?=({alternatives})\b)", re.IGNORECASE)

    def segment(self, rule: RuleText) -> SegmentedRule:
        texts = self.segment_text(rule.body)
        edus = tuple(EDU(text=t, index=i) for i, t in enumerate(texts))
        return SegmentedRule(rule_id=rule.id, edus=edus)

    def segment_text(self, body: str) -> list[str]:
        if not body.strip():
            raise ValidationError("cannot segment an empty rule body")
        units: list[str] = []
        for line in body.splitlines():
            if not line.strip():
                continue
            for sentence in _split_sentences(line):
                for clause in self._split_clauses(sentence):
                    trimmed = clause.strip()
                    if trimmed:
                        units.append(trimmed)
        return units

    def _split_clauses(self, sentence: str) -> list[str]:
        parts = []
        start = 0
        for match in self._clause_re.finditer(sentence):
            cut_left = match.end(1)
            cut_right = match.start(2)
            if cut_right <= start:
                continue
            parts.append(sentence[start:cut_left])
            start = cut_right
        parts.append(sentence[start:])
        return parts


def _split_sentences(line: str) -> list[str]:
    parts = []
    start = 0
    for match in _TERMINATOR_RE.finditer(line):
        prefix = line[start : match.start()].strip()
        if prefix.isdigit():
            # item number like "3." introducing a list entry, not a sentence end
            continue
        parts.append(line[start : match.end()])
        start = match.end()
    parts.append(line[start:])
    return parts


def normalize_ws(text: str) -> str:
    """Collapse all whitespace runs to single spaces and trim the ends."""
    return " ".join(text.split())
