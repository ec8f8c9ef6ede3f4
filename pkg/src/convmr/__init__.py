"""Toolkit for open-retrieval conversational machine reading over rule texts.

The pipeline reads a knowledge base of rule texts, retrieves the rules
relevant to a user scenario and question, segments them into clause-level
units, serializes everything into a single flat input string, hands that to
a text generator (a deterministic scripted table, or a remote model behind a
JSON-lines wire protocol), parses the generated answer into a decision plus
optional follow-up question, and scores the result.
"""

__version__ = "0.1.0"

from .corpus import (
    Decision,
    DialogueTreeNode,
    DialogueTurn,
    Example,
    KnowledgeBase,
    RuleText,
    flatten_dialogue_tree,
    load_examples,
    load_knowledge_base,
    tag_seen_unseen,
)
from .errors import (
    CorpusParseError,
    GenerationError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from .generation import (
    GenerationParams,
    ModelOutput,
    RemoteGenerator,
    ScriptedGenerator,
    nll_loss,
)
from .harness import RunConfig, SweepSpec, run_pipeline, sweep
from .metrics import EvalReport, PairedResult, decision_accuracy, evaluate, f1_bleu, sentence_bleu
from .retriever import Index, RetrievalResult, build_index, retrieve, tokenize_ngrams
from .segmenter import EDU, RuleSegmenter, SegmentedRule
from .serializer import (
    ParsedPrediction,
    SerializedInstance,
    TargetSequence,
    build_input,
    build_target,
    parse_output,
)

__all__ = [
    "Decision",
    "DialogueTreeNode",
    "DialogueTurn",
    "EDU",
    "EvalReport",
    "Example",
    "GenerationError",
    "GenerationParams",
    "Index",
    "KnowledgeBase",
    "ModelOutput",
    "PairedResult",
    "ParsedPrediction",
    "ProtocolError",
    "RemoteGenerator",
    "RetrievalResult",
    "RuleSegmenter",
    "RuleText",
    "RunConfig",
    "ScriptedGenerator",
    "SegmentedRule",
    "SerializedInstance",
    "SweepSpec",
    "TargetSequence",
    "TransportError",
    "ValidationError",
    "CorpusParseError",
    "build_index",
    "build_input",
    "build_target",
    "decision_accuracy",
    "evaluate",
    "f1_bleu",
    "flatten_dialogue_tree",
    "load_examples",
    "load_knowledge_base",
    "nll_loss",
    "parse_output",
    "retrieve",
    "run_pipeline",
    "sentence_bleu",
    "sweep",
    "tag_seen_unseen",
    "tokenize_ngrams",
]
