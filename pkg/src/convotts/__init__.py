"""Conversational TTS with style captions: tokenizer, dialogue LM, and CFM renderer."""

__version__ = "0.1.0"

from .corpus import (
    CorpusStats,
    DialogueSession,
    ManifestError,
    SplitSpec,
    StyleFactors,
    Utterance,
    ValidationError,
    load_corpus,
    save_corpus,
    split_corpus,
    window_context,
)
from .tokenizer import (
    SegmentLayout,
    TokenSequence,
    TrainingTarget,
    TurnTokens,
    VocabSpec,
    build_sequence,
    build_training_target,
    parse_layout,
)

__all__ = [
    "CorpusStats",
    "DialogueSession",
    "ManifestError",
    "SegmentLayout",
    "SplitSpec",
    "StyleFactors",
    "TokenSequence",
    "TrainingTarget",
    "TurnTokens",
    "Utterance",
    "ValidationError",
    "VocabSpec",
    "__version__",
    "build_sequence",
    "build_training_target",
    "load_corpus",
    "parse_layout",
    "save_corpus",
    "split_corpus",
    "window_context",
]
