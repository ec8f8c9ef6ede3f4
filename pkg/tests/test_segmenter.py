from __future__ import annotations

import random

import pytest

from convmr.corpus import RuleText
from convmr.errors import ValidationError
from convmr.segmenter import (
    DEFAULT_MARKERS,
    RuleSegmenter,
    default_markers_path,
    load_markers,
    normalize_ws,
)
from convmr.synthetic import make_corpus


@pytest.fixture(scope="module")
def segmenter():
    return RuleSegmenter()


def _rule(body):
    return RuleText(id="r", source="t", body=body)


class TestSegmentRules:
    def test_single_sentence_no_split(self, segmenter):
        assert segmenter.segment_text("You can apply.") == ["You can apply."]

    def test_sentence_initial_marker_not_split(self, segmenter):
        assert segmenter.segment_text("If you are over 65, you can apply.") == [
            "If you are over 65, you can apply."
        ]

    def test_comma_marker_split(self, segmenter):
        assert segmenter.segment_text("You can apply, if you are over 65.") == [
            "You can apply,",
            "if you are over 65.",
        ]

    def test_bullet_list(self, segmenter):
        body = "Eligibility:\n- you live in the UK\n- you are over 65"
        assert segmenter.segment_text(body) == [
            "Eligibility:",
            "- you live in the UK",
            "- you are over 65",
        ]

    def test_sentence_terminator_split(self, segmenter):
        assert segmenter.segment_text("Apply today. Wait for a reply!") == [
            "Apply today.",
            "Wait for a reply!",
        ]

    def test_numbered_item_prefix_protected(self, segmenter):
        assert segmenter.segment_text("1. Do this. Then wait.") == [
            "1. Do this.",
            "Then wait.",
        ]

    def test_decimal_number_not_split(self, segmenter):
        assert segmenter.segment_text("The rate is 3.5 percent.") == [
            "The rate is 3.5 percent."
        ]

    def test_multiple_clause_markers(self, segmenter):
        assert segmenter.segment_text("You qualify, if you work, and you live here.") == [
            "You qualify,",
            "if you work,",
            "and you live here.",
        ]

    def test_semicolon_marker_split(self, segmenter):
        assert segmenter.segment_text("Apply now; unless you already did.") == [
            "Apply now;",
            "unless you already did.",
        ]

    def test_marker_word_prefix_not_split(self, segmenter):
        # "andrew" starts with "and" but is not the marker
        assert segmenter.segment_text("Call us, andrew will help.") == [
            "Call us, andrew will help."
        ]

    def test_empty_body_rejected(self, segmenter):
        with pytest.raises(ValidationError):
            segmenter.segment_text("   \n  ")

    def test_segment_returns_indexed_edus(self, segmenter):
        segmented = segmenter.segment(_rule("One. Two."))
        assert segmented.n_units == 2
        assert [edu.index for edu in segmented.edus] == [0, 1]
        assert segmented.texts() == ["One.", "Two."]


NASTY_BODIES = [
    "You can apply.",
    "If you are over 65, you can apply.",
    "You can apply, if you are over 65.",
    "Eligibility:\n- you live in the UK\n- you are over 65",
    "1. First thing. 2. Second thing.",
    "Header:\n* item one\n* item two, or item three",
    "Rates change. The 3.5 rate holds, unless noted; because reasons.",
    "  leading space\nand trailing  ",
    "One line only",
    "A? B! C.",
]


class TestInvariants:
    def test_reconstruction_fixtures(self, segmenter):
        for body in NASTY_BODIES:
            units = segmenter.segment_text(body)
            assert normalize_ws(" ".join(units)) == normalize_ws(body), body

    def test_reconstruction_synthetic(self, segmenter):
        kb, _ = make_corpus(21, n_rules=40)
        for rule in kb:
            units = segmenter.segment_text(rule.body)
            assert normalize_ws(" ".join(units)) == normalize_ws(rule.body)

    def test_idempotence(self, segmenter):
        kb, _ = make_corpus(22, n_rules=40)
        bodies = [rule.body for rule in kb] + NASTY_BODIES
        for body in bodies:
            for unit in segmenter.segment_text(body):
                assert segmenter.segment_text(unit) == [unit]

    def test_determinism(self, segmenter):
        kb, _ = make_corpus(23, n_rules=10)
        for rule in kb:
            assert segmenter.segment(rule) == segmenter.segment(rule)


class TestMarkerLexicon:
    def test_packaged_lexicon_matches_default(self):
        assert load_markers(default_markers_path()) == DEFAULT_MARKERS

    def test_custom_lexicon_changes_splits(self):
        slim = RuleSegmenter(markers=("if",))
        assert slim.segment_text("You qualify, if you work, and you live here.") == [
            "You qualify,",
            "if you work, and you live here.",
        ]

    def test_lexicon_file_roundtrip(self, tmp_path):
        path = tmp_path / "markers.txt"
        path.write_text("# comment\nif\nunless\n\n", encoding="utf-8")
        assert load_markers(path) == ("if", "unless")

    def test_empty_lexicon_rejected(self, tmp_path):
        path = tmp_path / "markers.txt"
        path.write_text("# only a comment\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_markers(path)
