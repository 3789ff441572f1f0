"""LLM-driven style captioning: acoustic features, prompts, and the pipeline."""

from .features import (
    AttributeThresholds,
    DEFAULT_THRESHOLDS,
    classify_level,
    estimate_tempo,
    extract_energy,
    extract_pitch,
    measure_style,
    parse_alignment,
    pitch_contour,
)
from .llm import (
    HttpLLMClient,
    LLMClient,
    LLMTransportError,
    MockLLMClient,
    RetryPolicy,
    ScriptedLLMClient,
    load_prompt_template,
    parse_emotion_label,
)
from .phrases import (
    EXPANSION_RULES,
    apply_expansion_rule,
    caption_consistent,
    render_basic_description,
)
from .pipeline import (
    CaptionRecord,
    annotate_corpus,
    classify_dialog_emotions,
    expand_caption,
    generate_basic_description,
    verify_caption,
    write_caption_log,
)

__all__ = [
    "AttributeThresholds",
    "DEFAULT_THRESHOLDS",
    "CaptionRecord",
    "EXPANSION_RULES",
    "HttpLLMClient",
    "LLMClient",
    "LLMTransportError",
    "MockLLMClient",
    "RetryPolicy",
    "ScriptedLLMClient",
    "annotate_corpus",
    "apply_expansion_rule",
    "caption_consistent",
    "classify_dialog_emotions",
    "classify_level",
    "estimate_tempo",
    "expand_caption",
    "extract_energy",
    "extract_pitch",
    "generate_basic_description",
    "load_prompt_template",
    "measure_style",
    "parse_alignment",
    "parse_emotion_label",
    "pitch_contour",
    "render_basic_description",
    "verify_caption",
    "write_caption_log",
]
