"""Style-caption annotation pipeline.

Per session: measure style factors for every audible turn, classify per-turn
emotion from the whole dialogue, draft a basic description, expand it under a
seeded-random rule, and verify the result against the measured facts. With
the mock client the whole pipeline is a pure function of (corpus, seed).
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import audio
from ..corpus import EMOTIONS, DialogueSession, StyleFactors, Utterance
from . import phrases
from .features import AttributeThresholds, DEFAULT_THRESHOLDS, measure_style, parse_alignment
from .llm import (
    LLMClient,
    LLMTransportError,
    RetryPolicy,
    load_prompt_template,
    parse_emotion_label,
)

log = logging.getLogger(__name__)

MAX_CAPTION_REGENERATIONS = 2


@dataclass(frozen=True)
class CaptionRecord:
    session_id: str
    turn_index: int
    speaker_id: str
    basic_description: str
    empathetic_caption: str
    expansion_rule_id: int
    verified: bool
    emotion: str
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 1 <= self.expansion_rule_id <= 8:
            raise ValueError(f"expansion_rule_id must be in 1..8, got {self.expansion_rule_id}")
        if self.verified and not self.empathetic_caption.strip():
            raise ValueError("verified record with an empty caption")
        if self.emotion not in EMOTIONS:
            raise ValueError(f"unknown emotion {self.emotion!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"flags": list(self.flags)}


def build_dialog_block(session: DialogueSession) -> str:
    lines = []
    for i, turn in enumerate(session.turns):
        audio_ref = str(turn.audio_path) if turn.audio_path else "none"
        lines.append(
            f'<utterance index="{i}" speaker="{turn.speaker_id}" role="{turn.role}" '
            f'audio="{audio_ref}">{turn.text}</utterance>'
        )
    return "\n".join(lines)


def classify_dialog_emotions(
    session: DialogueSession,
    client: LLMClient,
    retry: RetryPolicy = RetryPolicy(),
) -> tuple[list[str], list[bool]]:
    """One emotion per utterance plus a fallback flag where parsing failed."""
    prompt = load_prompt_template("emotion_classification").format(
        dialog_block=build_dialog_block(session)
    )
    n = len(session.turns)
    last_labels: list[str | None] | None = None
    transport_failures = 0
    for _ in range(retry.max_attempts):
        try:
            response = client.complete(prompt)
        except LLMTransportError:
            transport_failures += 1
            continue
        lines = [ln for ln in response.splitlines() if ln.strip()]
        labels = [parse_emotion_label(ln) for ln in lines[:n]]
        labels += [None] * (n - len(labels))
        if all(lab is not None for lab in labels):
            return [str(lab) for lab in labels], [False] * n
        last_labels = labels
    if last_labels is None:
        raise LLMTransportError(
            f"emotion classification failed after {retry.max_attempts} attempts "
            f"({transport_failures} transport failures)"
        )
    emotions = [lab if lab is not None else "Neutral" for lab in last_labels]
    flags = [lab is None for lab in last_labels]
    return emotions, flags


def identify_gender(
    speaker_id: str, audio_path: str, client: LLMClient, retry: RetryPolicy = RetryPolicy()
) -> str:
    prompt = load_prompt_template("gender_identification").format(
        speaker_id=speaker_id, audio_path=audio_path
    )
    for _ in range(retry.max_attempts):
        answer = client.complete(prompt).strip().lower()
        if answer in ("male", "female"):
            return answer
    raise ValueError(f"could not identify gender for speaker {speaker_id!r}")


def _attribute_fields(style: StyleFactors, emotion: str) -> dict[str, str]:
    return {
        "gender": style.gender,
        "emotion": emotion,
        "pitch": style.levels.get("pitch", "normal"),
        "energy": style.levels.get("energy", "normal"),
        "tempo": style.levels.get("tempo", "normal"),
    }


def generate_basic_description(
    text: str,
    style: StyleFactors,
    emotion: str,
    client: LLMClient,
    retry: RetryPolicy = RetryPolicy(),
) -> str:
    prompt = load_prompt_template("basic_description").format(
        text=text, **_attribute_fields(style, emotion)
    )
    for _ in range(retry.max_attempts):
        response = client.complete(prompt).strip()
        if response:
            return response
    raise RuntimeError("LLM returned an empty basic description after retries")


def expand_caption(
    basic_description: str,
    rule_id: int,
    style: StyleFactors,
    emotion: str,
    client: LLMClient,
    already_expanded: bool = False,
    retry: RetryPolicy = RetryPolicy(),
) -> str:
    if already_expanded:
        raise ValueError("caption is already expanded; refusing to expand twice")
    if not 1 <= rule_id <= 8:
        raise ValueError(f"expansion rule must be in 1..8, got {rule_id}")
    prompt = load_prompt_template("caption_expansion").format(
        rule_id=rule_id,
        rule_name=phrases.EXPANSION_RULES[rule_id],
        basic=basic_description,
        **_attribute_fields(style, emotion),
    )
    for _ in range(retry.max_attempts):
        response = client.complete(prompt).strip()
        if response:
            return response
    raise RuntimeError("LLM returned an empty expansion after retries")


def verify_caption(
    caption: str,
    style: StyleFactors,
    emotion: str,
    client: LLMClient | None = None,
    use_llm: bool = False,
) -> bool:
    """Offline keyword-consistency check, optionally ANDed with an LLM vote."""
    if not caption.strip():
        raise ValueError("cannot verify an empty caption")
    ok = phrases.caption_consistent(caption, style, emotion)
    if ok and use_llm and client is not None:
        prompt = load_prompt_template("caption_verification").format(
            caption=caption, **_attribute_fields(style, emotion)
        )
        ok = client.complete(prompt).strip().upper() == "CONSISTENT"
    return ok


def _collect_alignments(
    alignments_dir: Path, sessions: list[DialogueSession]
) -> dict[str, Path]:
    known_stems = {
        t.audio_path.stem
        for s in sessions
        for t in s.turns
        if t.audio_path is not None
    }
    mapping: dict[str, Path] = {}
    for path in sorted(alignments_dir.glob("*.tsv")):
        if path.stem not in known_stems:
            raise ValueError(f"alignment {path.name} references an unknown utterance")
        mapping[path.stem] = path
    return mapping


def annotate_corpus(
    sessions: list[DialogueSession],
    client: LLMClient,
    thresholds: AttributeThresholds = DEFAULT_THRESHOLDS,
    seed: int = 0,
    alignments_dir: str | Path | None = None,
    use_llm_verification: bool = False,
    retry: RetryPolicy = RetryPolicy(),
) -> tuple[list[DialogueSession], list[CaptionRecord]]:
    """Annotate every audible utterance with style, emotion, and a caption."""
    rng = np.random.default_rng(seed)
    alignment_map: dict[str, Path] = {}
    if alignments_dir is not None:
        alignment_map = _collect_alignments(Path(alignments_dir), sessions)

    out_sessions: list[DialogueSession] = []
    records: list[CaptionRecord] = []
    failures = 0
    for session in sessions:
        emotions, emo_flags = classify_dialog_emotions(session, client, retry)
        new_turns: list[Utterance] = []
        for ti, turn in enumerate(session.turns):
            emotion = emotions[ti]
            if turn.audio_path is None:
                log.warning(
                    "session %s turn %d has no audio; emotion only", session.session_id, ti
                )
                new_turns.append(dataclasses.replace(turn, emotion=emotion))
                continue
            # the rule draw happens before any fallible step so the RNG
            # stream stays aligned even when an utterance fails
            rule_id = int(rng.integers(1, 9))
            try:
                new_turn, record = _annotate_utterance(
                    session.session_id,
                    ti,
                    turn,
                    emotion,
                    emo_flags[ti],
                    rule_id,
                    client,
                    thresholds,
                    alignment_map,
                    use_llm_verification,
                    retry,
                )
            except (ValueError, RuntimeError, OSError) as exc:
                if isinstance(exc, LLMTransportError):
                    raise
                failures += 1
                log.warning(
                    "session %s turn %d failed annotation: %s", session.session_id, ti, exc
                )
                new_turns.append(dataclasses.replace(turn, emotion=emotion))
                continue
            new_turns.append(new_turn)
            records.append(record)
        out_sessions.append(dataclasses.replace(session, turns=tuple(new_turns)))
    if failures:
        log.warning("annotation finished with %d per-utterance failures", failures)
    return out_sessions, records


def _annotate_utterance(
    session_id: str,
    turn_index: int,
    turn: Utterance,
    emotion: str,
    emotion_flagged: bool,
    rule_id: int,
    client: LLMClient,
    thresholds: AttributeThresholds,
    alignment_map: dict[str, Path],
    use_llm_verification: bool,
    retry: RetryPolicy,
) -> tuple[Utterance, CaptionRecord]:
    waveform, sr = audio.read_wav(turn.audio_path)
    gender = turn.gender or identify_gender(
        turn.speaker_id, str(turn.audio_path), client, retry
    )
    alignment = None
    stem = turn.audio_path.stem  # type: ignore[union-attr]
    if stem in alignment_map:
        alignment = parse_alignment(alignment_map[stem])
    style = measure_style(waveform, sr, turn.text, gender, thresholds, alignment)

    basic = generate_basic_description(turn.text, style, emotion, client, retry)
    caption = expand_caption(basic, rule_id, style, emotion, client, retry=retry)
    verified = verify_caption(caption, style, emotion, client, use_llm_verification)
    regenerations = 0
    while not verified and regenerations < MAX_CAPTION_REGENERATIONS:
        regenerations += 1
        caption = expand_caption(basic, rule_id, style, emotion, client, retry=retry)
        verified = verify_caption(caption, style, emotion, client, use_llm_verification)

    flags: list[str] = []
    if emotion_flagged:
        flags.append("emotion_fallback")
    if style.tempo_approximate:
        flags.append("tempo_approximate")
    if not verified:
        flags.append("unverified")

    record = CaptionRecord(
        session_id=session_id,
        turn_index=turn_index,
        speaker_id=turn.speaker_id,
        basic_description=basic,
        empathetic_caption=caption,
        expansion_rule_id=rule_id,
        verified=verified,
        emotion=emotion,
        flags=tuple(flags),
    )
    new_turn = dataclasses.replace(
        turn, caption=caption, emotion=emotion, style=style, gender=gender
    )
    return new_turn, record


def write_caption_log(records: list[CaptionRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True))
            fh.write("\n")
    return path
