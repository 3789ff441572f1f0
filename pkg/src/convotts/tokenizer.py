"""Framed token sequences over one unified id space.

Layout of a complete training sequence (captions included):

    BOS
    per history turn:  SPEAKER_SLOT  codes...  text...  CAPTION_START  caption...  CAPTION_END
    target turn:       SPEAKER_SLOT  text...  CAPTION_START
    training tail:     caption...  CAPTION_END  codes...  CODES_END  EOS

At inference the sequence stops at the target's CAPTION_START; the model then
produces the caption, CAPTION_END, the codes, and CODES_END. In caption-free
mode every caption span and CAPTION_END disappears while CAPTION_START is kept
as the generation trigger, so the codes follow it directly.

The id space is [0, bpe) for text/caption tokens, then six specials, then
code ids. EOS closes complete sequences but is never a supervised target; the
loss masks cover exactly the target caption span plus CAPTION_END and the
target code span plus CODES_END.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPECIAL_NAMES = ("BOS", "EOS", "CAPTION_START", "CAPTION_END", "CODES_END", "SPEAKER_SLOT")
N_SPECIALS = len(SPECIAL_NAMES)

SPEAKER_DIM = 192


class ParseError(ValueError):
    """Raised when an id sequence does not follow the framing grammar."""


@dataclass(frozen=True)
class VocabSpec:
    """Disjoint sub-vocabulary layout: BPE text ids, specials, speech codes."""

    bpe_vocab_size: int
    code_vocab_size: int

    def __post_init__(self) -> None:
        if self.bpe_vocab_size < 1:
            raise ValueError(f"bpe_vocab_size must be >= 1, got {self.bpe_vocab_size}")
        if self.code_vocab_size < 1:
            raise ValueError(f"code_vocab_size must be >= 1, got {self.code_vocab_size}")

    @property
    def special_base(self) -> int:
        return self.bpe_vocab_size

    @property
    def code_base(self) -> int:
        return self.bpe_vocab_size + N_SPECIALS

    @property
    def total_size(self) -> int:
        return self.code_base + self.code_vocab_size

    @property
    def bos(self) -> int:
        return self.special_base

    @property
    def eos(self) -> int:
        return self.special_base + 1

    @property
    def caption_start(self) -> int:
        return self.special_base + 2

    @property
    def caption_end(self) -> int:
        return self.special_base + 3

    @property
    def codes_end(self) -> int:
        return self.special_base + 4

    @property
    def speaker_slot(self) -> int:
        return self.special_base + 5

    def is_text(self, token_id: int) -> bool:
        return 0 <= token_id < self.bpe_vocab_size

    def is_special(self, token_id: int) -> bool:
        return self.special_base <= token_id < self.code_base

    def is_code(self, token_id: int) -> bool:
        return self.code_base <= token_id < self.total_size

    def code_id(self, code_index: int) -> int:
        """Map a raw codebook index into the unified id space."""
        if not 0 <= code_index < self.code_vocab_size:
            raise ValueError(f"code index {code_index} outside [0, {self.code_vocab_size})")
        return self.code_base + code_index

    def code_index(self, token_id: int) -> int:
        if not self.is_code(token_id):
            raise ValueError(f"id {token_id} is not a speech-code id")
        return token_id - self.code_base

    def text_id_range(self) -> range:
        return range(0, self.bpe_vocab_size)

    def code_id_range(self) -> range:
        return range(self.code_base, self.total_size)

    def to_dict(self) -> dict:
        return {
            "bpe_vocab_size": self.bpe_vocab_size,
            "code_vocab_size": self.code_vocab_size,
            "specials": list(SPECIAL_NAMES),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VocabSpec":
        return cls(bpe_vocab_size=d["bpe_vocab_size"], code_vocab_size=d["code_vocab_size"])

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class TurnTokens:
    """Pre-tokenized material for one utterance."""

    speaker_vector: np.ndarray
    text_ids: tuple[int, ...]
    codes: tuple[int, ...] | None = None
    caption_ids: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        vec = np.asarray(self.speaker_vector, dtype=np.float64)
        if vec.shape != (SPEAKER_DIM,):
            raise ValueError(f"speaker vector must have shape ({SPEAKER_DIM},), got {vec.shape}")
        if len(self.text_ids) < 1:
            raise ValueError("turn has no text ids")


@dataclass(frozen=True)
class TurnSpan:
    """Positions of one turn's segments inside the id sequence.

    Spans are half-open [start, end) index pairs; single positions are ints.
    """

    speaker_pos: int
    text_span: tuple[int, int]
    code_span: tuple[int, int] | None = None
    caption_start_pos: int | None = None
    caption_span: tuple[int, int] | None = None
    caption_end_pos: int | None = None


@dataclass(frozen=True)
class SegmentLayout:
    history: tuple[TurnSpan, ...]
    target: TurnSpan
    captions_included: bool
    codes_end_pos: int | None = None
    eos_pos: int | None = None

    @property
    def target_caption_length(self) -> int | None:
        if self.target.caption_span is None:
            return None
        s, e = self.target.caption_span
        return e - s

    @property
    def target_code_length(self) -> int | None:
        if self.target.code_span is None:
            return None
        s, e = self.target.code_span
        return e - s


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    layout: SegmentLayout
    speaker_vectors: np.ndarray  # [n_turns, SPEAKER_DIM], history order then target

    def speaker_positions(self) -> list[int]:
        spans = list(self.layout.history) + [self.layout.target]
        return [s.speaker_pos for s in spans]


@dataclass(frozen=True)
class TrainingTarget:
    """Left-shifted training pair with phase loss masks on target positions."""

    input_ids: np.ndarray
    target_ids: np.ndarray
    caption_mask: np.ndarray
    speech_mask: np.ndarray
    speaker_positions: np.ndarray  # input positions holding a speaker slot
    speaker_vectors: np.ndarray  # [n_turns, SPEAKER_DIM]

    def __post_init__(self) -> None:
        n = len(self.input_ids)
        for name in ("target_ids", "caption_mask", "speech_mask"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")
        if np.any(self.caption_mask & self.speech_mask):
            raise ValueError("caption and speech masks overlap")


def build_sequence(
    history: Sequence[TurnTokens],
    target: TurnTokens,
    vocab: VocabSpec,
    *,
    target_caption_ids: Sequence[int] | None = None,
    target_codes: Sequence[int] | None = None,
    include_captions: bool = True,
) -> TokenSequence:
    """Assemble the framed id sequence for (history, target).

    The target's own ``codes``/``caption_ids`` fields are ignored; supply the
    training tail explicitly via the keyword arguments. Passing neither yields
    the inference framing ending at the target's CAPTION_START.
    """
    if include_captions and target_codes is not None and target_caption_ids is None:
        raise ValueError("target codes require a target caption unless include_captions=False")
    if not include_captions and target_caption_ids is not None:
        raise ValueError("target caption supplied but include_captions=False")

    ids: list[int] = [vocab.bos]
    vectors: list[np.ndarray] = []
    history_spans: list[TurnSpan] = []

    for n, turn in enumerate(history):
        if turn.codes is None:
            raise ValueError(f"history turn {n} is missing semantic codes")
        if include_captions and turn.caption_ids is None:
            raise ValueError(f"history turn {n} is missing a caption")
        speaker_pos = len(ids)
        ids.append(vocab.speaker_slot)
        vectors.append(np.asarray(turn.speaker_vector, dtype=np.float64))
        code_start = len(ids)
        ids.extend(vocab.code_id(c) for c in turn.codes)
        code_span = (code_start, len(ids))
        text_start = len(ids)
        for t in turn.text_ids:
            if not vocab.is_text(t):
                raise ValueError(f"history turn {n}: text id {t} outside BPE range")
            ids.append(t)
        text_span = (text_start, len(ids))
        caption_start_pos = len(ids)
        ids.append(vocab.caption_start)
        caption_span = None
        caption_end_pos = None
        if include_captions:
            cap_start = len(ids)
            for t in turn.caption_ids:  # type: ignore[union-attr]
                if not vocab.is_text(t):
                    raise ValueError(f"history turn {n}: caption id {t} outside BPE range")
                ids.append(t)
            caption_span = (cap_start, len(ids))
            caption_end_pos = len(ids)
            ids.append(vocab.caption_end)
        history_spans.append(
            TurnSpan(
                speaker_pos=speaker_pos,
                text_span=text_span,
                code_span=code_span,
                caption_start_pos=caption_start_pos,
                caption_span=caption_span,
                caption_end_pos=caption_end_pos,
            )
        )

    # target triple: speaker, text, caption trigger
    tgt_speaker_pos = len(ids)
    ids.append(vocab.speaker_slot)
    vectors.append(np.asarray(target.speaker_vector, dtype=np.float64))
    tgt_text_start = len(ids)
    for t in target.text_ids:
        if not vocab.is_text(t):
            raise ValueError(f"target turn: text id {t} outside BPE range")
        ids.append(t)
    tgt_text_span = (tgt_text_start, len(ids))
    tgt_caption_start_pos = len(ids)
    ids.append(vocab.caption_start)

    tgt_caption_span = None
    tgt_caption_end_pos = None
    if target_caption_ids is not None:
        s = len(ids)
        for t in target_caption_ids:
            if not vocab.is_text(t):
                raise ValueError(f"target caption id {t} outside BPE range")
            ids.append(t)
        tgt_caption_span = (s, len(ids))
        tgt_caption_end_pos = len(ids)
        ids.append(vocab.caption_end)

    tgt_code_span = None
    codes_end_pos = None
    eos_pos = None
    if target_codes is not None:
        s = len(ids)
        ids.extend(vocab.code_id(c) for c in target_codes)
        tgt_code_span = (s, len(ids))
        codes_end_pos = len(ids)
        ids.append(vocab.codes_end)
        eos_pos = len(ids)
        ids.append(vocab.eos)

    layout = SegmentLayout(
        history=tuple(history_spans),
        target=TurnSpan(
            speaker_pos=tgt_speaker_pos,
            text_span=tgt_text_span,
            code_span=tgt_code_span,
            caption_start_pos=tgt_caption_start_pos,
            caption_span=tgt_caption_span,
            caption_end_pos=tgt_caption_end_pos,
        ),
        captions_included=include_captions,
        codes_end_pos=codes_end_pos,
        eos_pos=eos_pos,
    )
    return TokenSequence(
        ids=tuple(ids),
        layout=layout,
        speaker_vectors=np.stack(vectors, axis=0),
    )


def _run(ids: tuple[int, ...], start: int, pred) -> int:
    """Index one past the end of the maximal run satisfying pred."""
    i = start
    while i < len(ids) and pred(ids[i]):
        i += 1
    return i


def parse_layout(ids: Sequence[int], vocab: VocabSpec) -> SegmentLayout:
    """Recover the segment layout of a framed id sequence.

    Inverse of build_sequence on the id level. An inference-framing sequence
    with empty history is reported with captions_included=True (the two
    framings coincide there).
    """
    ids = tuple(ids)
    if not ids or ids[0] != vocab.bos:
        raise ParseError("sequence must start with BOS")
    for pos, t in enumerate(ids):
        if not (vocab.is_text(t) or vocab.is_special(t) or vocab.is_code(t)):
            raise ParseError(f"position {pos}: id {t} outside the vocabulary")
        if pos > 0 and t == vocab.bos:
            raise ParseError(f"position {pos}: unexpected interior BOS")

    spans: list[TurnSpan] = []
    caption_flags: list[bool] = []
    i = 1
    codes_end_pos: int | None = None
    eos_pos: int | None = None
    target_span: TurnSpan | None = None

    while i < len(ids):
        if ids[i] != vocab.speaker_slot:
            raise ParseError(f"position {i}: expected a speaker slot, got id {ids[i]}")
        speaker_pos = i
        i += 1
        code_end = _run(ids, i, vocab.is_code)
        pre_code_span = (i, code_end) if code_end > i else None
        i = code_end
        text_end = _run(ids, i, vocab.is_text)
        if text_end == i:
            raise ParseError(f"position {i}: turn has no text ids")
        text_span = (i, text_end)
        i = text_end
        if i >= len(ids) or ids[i] != vocab.caption_start:
            raise ParseError(f"position {i}: expected CAPTION_START after turn text")
        caption_start_pos = i
        i += 1

        # what follows CAPTION_START decides the turn's role
        if i < len(ids) and ids[i] == vocab.speaker_slot:
            # caption-free history turn
            if pre_code_span is None:
                raise ParseError(f"position {speaker_pos}: history turn has no codes")
            spans.append(
                TurnSpan(
                    speaker_pos=speaker_pos,
                    text_span=text_span,
                    code_span=pre_code_span,
                    caption_start_pos=caption_start_pos,
                )
            )
            caption_flags.append(False)
            continue

        cap_end = _run(ids, i, vocab.is_text)
        caption_span = (i, cap_end) if cap_end > i else None
        i = cap_end
        if caption_span is not None and (i >= len(ids) or ids[i] != vocab.caption_end):
            raise ParseError(f"position {i}: caption span not closed by CAPTION_END")

        if i < len(ids) and ids[i] == vocab.caption_end:
            if caption_span is None:
                caption_span = (cap_end, cap_end)  # empty caption, still delimited
            caption_end_pos = i
            i += 1
            if i < len(ids) and ids[i] == vocab.speaker_slot:
                # captioned history turn
                if pre_code_span is None:
                    raise ParseError(f"position {speaker_pos}: history turn has no codes")
                spans.append(
                    TurnSpan(
                        speaker_pos=speaker_pos,
                        text_span=text_span,
                        code_span=pre_code_span,
                        caption_start_pos=caption_start_pos,
                        caption_span=caption_span,
                        caption_end_pos=caption_end_pos,
                    )
                )
                caption_flags.append(True)
                continue
            # target turn with caption tail
            if pre_code_span is not None:
                raise ParseError(f"position {speaker_pos}: target turn cannot carry leading codes")
            tgt_code_span = None
            code_end = _run(ids, i, vocab.is_code)
            if code_end > i:
                tgt_code_span = (i, code_end)
                i = code_end
                if i >= len(ids) or ids[i] != vocab.codes_end:
                    raise ParseError(f"position {i}: code span not closed by CODES_END")
                codes_end_pos = i
                i += 1
                if i >= len(ids) or ids[i] != vocab.eos:
                    raise ParseError(f"position {i}: complete sequence must end with EOS")
                eos_pos = i
                i += 1
            if i != len(ids):
                raise ParseError(f"position {i}: trailing ids after the target turn")
            target_span = TurnSpan(
                speaker_pos=speaker_pos,
                text_span=text_span,
                code_span=tgt_code_span,
                caption_start_pos=caption_start_pos,
                caption_span=caption_span,
                caption_end_pos=caption_end_pos,
            )
            caption_flags.append(True)
            break

        # no caption tokens and no CAPTION_END: target turn (inference framing
        # or caption-free training framing)
        if pre_code_span is not None:
            raise ParseError(f"position {speaker_pos}: target turn cannot carry leading codes")
        tgt_code_span = None
        code_end = _run(ids, i, vocab.is_code)
        if code_end > i:
            tgt_code_span = (i, code_end)
            i = code_end
            if i >= len(ids) or ids[i] != vocab.codes_end:
                raise ParseError(f"position {i}: code span not closed by CODES_END")
            codes_end_pos = i
            i += 1
            if i >= len(ids) or ids[i] != vocab.eos:
                raise ParseError(f"position {i}: complete sequence must end with EOS")
            eos_pos = i
            i += 1
        if i != len(ids):
            raise ParseError(f"position {i}: trailing ids after the target turn")
        target_span = TurnSpan(
            speaker_pos=speaker_pos,
            text_span=text_span,
            code_span=tgt_code_span,
            caption_start_pos=caption_start_pos,
        )
        caption_flags.append(tgt_code_span is None)  # bare prompt: ambiguous, default True
        break

    if target_span is None:
        raise ParseError("sequence ended before a target turn was found")

    history_flags, target_flag = caption_flags[:-1], caption_flags[-1]
    if history_flags:
        if any(f != history_flags[0] for f in history_flags):
            raise ParseError("history turns mix captioned and caption-free framings")
        captions_included = history_flags[0]
        if captions_included and target_span.code_span is not None and target_span.caption_span is None:
            raise ParseError("captioned framing has target codes but no target caption")
    else:
        captions_included = target_flag or target_span.caption_span is not None

    return SegmentLayout(
        history=tuple(spans),
        target=target_span,
        captions_included=captions_included,
        codes_end_pos=codes_end_pos,
        eos_pos=eos_pos,
    )


def special_token_counts(ids: Sequence[int], vocab: VocabSpec) -> dict[str, int]:
    counts = {name: 0 for name in SPECIAL_NAMES}
    lookup = {
        vocab.bos: "BOS",
        vocab.eos: "EOS",
        vocab.caption_start: "CAPTION_START",
        vocab.caption_end: "CAPTION_END",
        vocab.codes_end: "CODES_END",
        vocab.speaker_slot: "SPEAKER_SLOT",
    }
    for t in ids:
        name = lookup.get(t)
        if name is not None:
            counts[name] += 1
    return counts


def expected_special_counts(
    n_history: int,
    *,
    include_captions: bool,
    target_caption: bool,
    target_codes: bool,
) -> dict[str, int]:
    """Closed-form special-token counts for a built sequence."""
    return {
        "BOS": 1,
        "EOS": 1 if target_codes else 0,
        "CAPTION_START": n_history + 1,
        "CAPTION_END": (n_history if include_captions else 0) + (1 if target_caption else 0),
        "CODES_END": 1 if target_codes else 0,
        "SPEAKER_SLOT": n_history + 1,
    }


def build_training_target(seq: TokenSequence, vocab: VocabSpec) -> TrainingTarget:
    """Left-shift a complete sequence and mark the two supervised spans."""
    layout = seq.layout
    tgt = layout.target
    if tgt.code_span is None or layout.codes_end_pos is None:
        raise ValueError("sequence lacks a target code span; build it with target_codes")
    if layout.captions_included and tgt.caption_span is None:
        raise ValueError("captioned sequence lacks a target caption span")

    ids = np.asarray(seq.ids, dtype=np.int64)
    input_ids = ids[:-1]
    target_ids = ids[1:]
    n = len(input_ids)

    caption_positions: set[int] = set()
    if tgt.caption_span is not None:
        caption_positions.update(range(*tgt.caption_span))
        caption_positions.add(tgt.caption_end_pos)  # type: ignore[arg-type]
    speech_positions = set(range(*tgt.code_span))
    speech_positions.add(layout.codes_end_pos)

    caption_mask = np.zeros(n, dtype=bool)
    speech_mask = np.zeros(n, dtype=bool)
    for i in range(n):
        pos = i + 1  # target_ids[i] == ids[pos]
        if pos in caption_positions:
            caption_mask[i] = True
        elif pos in speech_positions:
            speech_mask[i] = True

    speaker_positions = np.asarray(
        [p for p in seq.speaker_positions() if p < n], dtype=np.int64
    )
    if len(speaker_positions) != len(seq.speaker_vectors):
        raise ValueError("speaker slot fell outside the shifted input")

    return TrainingTarget(
        input_ids=input_ids,
        target_ids=target_ids,
        caption_mask=caption_mask,
        speech_mask=speech_mask,
        speaker_positions=speaker_positions,
        speaker_vectors=np.asarray(seq.speaker_vectors, dtype=np.float64),
    )


def decode_caption(ids: Sequence[int], vocab: VocabSpec, bpe_model) -> str:
    """BPE-decode caption ids, tolerating a trailing CAPTION_END."""
    ids = list(ids)
    if ids and ids[-1] == vocab.caption_end:
        ids = ids[:-1]
    for t in ids:
        if not vocab.is_text(t):
            raise ValueError(f"id {t} is not a caption/text id")
    return bpe_model.decode(ids)
