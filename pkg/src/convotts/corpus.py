"""Dialogue corpus loading, validation, splitting, windowing, and statistics.

A corpus is a JSON Lines manifest, one dialogue session per line. Audio paths
are stored relative to the manifest's directory and resolved on load.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import audio

log = logging.getLogger(__name__)

EMOTIONS = (
    "Angry",
    "Contempt",
    "Disgusted",
    "Fear",
    "Happy",
    "Sad",
    "Neutral",
    "Surprised",
)
ROLES = ("user", "agent")
GENDERS = ("male", "female")
LEVELS = ("low", "normal", "high")
STYLE_FACTORS = ("pitch", "energy", "tempo")


class ManifestError(ValueError):
    """Raised when a manifest file cannot be parsed."""


class ValidationError(ValueError):
    """Raised when a structurally valid record violates a domain invariant."""


@dataclass(frozen=True)
class StyleFactors:
    """Measured sentence-level style attributes with bucketed levels."""

    gender: str
    pitch_hz: float
    energy_rms: float
    tempo_mpd: float
    levels: dict[str, str] = field(default_factory=dict)
    tempo_approximate: bool = False

    def __post_init__(self) -> None:
        if self.gender not in GENDERS:
            raise ValidationError(f"unknown gender {self.gender!r}")
        for factor, level in self.levels.items():
            if factor not in STYLE_FACTORS:
                raise ValidationError(f"unknown style factor {factor!r}")
            if level not in LEVELS:
                raise ValidationError(f"unknown level {level!r} for {factor!r}")

    def to_dict(self) -> dict:
        return {
            "gender": self.gender,
            "pitch_hz": self.pitch_hz,
            "energy_rms": self.energy_rms,
            "tempo_mpd": self.tempo_mpd,
            "levels": dict(self.levels),
            "tempo_approximate": self.tempo_approximate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StyleFactors":
        return cls(
            gender=d["gender"],
            pitch_hz=float(d["pitch_hz"]),
            energy_rms=float(d["energy_rms"]),
            tempo_mpd=float(d["tempo_mpd"]),
            levels=dict(d.get("levels", {})),
            tempo_approximate=bool(d.get("tempo_approximate", False)),
        )


@dataclass(frozen=True)
class Utterance:
    speaker_id: str
    role: str
    text: str
    audio_path: Path | None = None
    caption: str | None = None
    emotion: str | None = None
    style: StyleFactors | None = None
    # optional per-speaker metadata carried through from the manifest
    gender: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValidationError(f"role must be one of {ROLES}, got {self.role!r}")
        if not self.text.strip():
            raise ValidationError("utterance text is empty after whitespace trim")
        if self.emotion is not None and self.emotion not in EMOTIONS:
            raise ValidationError(f"unknown emotion {self.emotion!r}")
        if self.gender is not None and self.gender not in GENDERS:
            raise ValidationError(f"unknown gender {self.gender!r}")

    def to_record(self, base_dir: Path | None = None) -> dict:
        rec: dict = {
            "speaker_id": self.speaker_id,
            "role": self.role,
            "text": self.text,
        }
        if self.audio_path is not None:
            p = self.audio_path
            if base_dir is not None:
                p = Path(os.path.relpath(p, base_dir))
            rec["audio"] = str(p)
        if self.caption is not None:
            rec["caption"] = self.caption
        if self.emotion is not None:
            rec["emotion"] = self.emotion
        if self.style is not None:
            rec["style"] = self.style.to_dict()
        if self.gender is not None:
            rec["gender"] = self.gender
        return rec

    @classmethod
    def from_record(cls, rec: dict, base_dir: Path | None = None) -> "Utterance":
        audio_path = None
        if rec.get("audio"):
            audio_path = Path(rec["audio"])
            if base_dir is not None and not audio_path.is_absolute():
                audio_path = (base_dir / audio_path).resolve()
        style = StyleFactors.from_dict(rec["style"]) if rec.get("style") else None
        return cls(
            speaker_id=rec["speaker_id"],
            role=rec["role"],
            text=rec["text"],
            audio_path=audio_path,
            caption=rec.get("caption"),
            emotion=rec.get("emotion"),
            style=style,
            gender=rec.get("gender"),
        )


@dataclass(frozen=True)
class DialogueSession:
    session_id: str
    turns: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        if len(self.turns) < 1:
            raise ValidationError(f"session {self.session_id!r}: needs at least one turn")
        for i, turn in enumerate(self.turns):
            expected = ROLES[i % 2]
            if turn.role != expected:
                raise ValidationError(
                    f"session {self.session_id!r}: turn {i} has role {turn.role!r}, "
                    f"expected {expected!r} (roles must alternate starting with user)"
                )

    def to_record(self, base_dir: Path | None = None) -> dict:
        return {
            "session_id": self.session_id,
            "turns": [t.to_record(base_dir) for t in self.turns],
        }

    @classmethod
    def from_record(cls, rec: dict, base_dir: Path | None = None) -> "DialogueSession":
        return cls(
            session_id=rec["session_id"],
            turns=tuple(Utterance.from_record(t, base_dir) for t in rec["turns"]),
        )


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.ratios) != 3:
            raise ValidationError(f"need exactly 3 ratios, got {len(self.ratios)}")
        if any(r < 0 for r in self.ratios):
            raise ValidationError(f"ratios must be non-negative: {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValidationError(f"ratios must sum to 1, got {sum(self.ratios)}")


@dataclass
class CorpusStats:
    dialog_count: int = 0
    utterance_count: int = 0
    total_hours: float = 0.0
    gender_counts: dict[str, int] = field(default_factory=dict)
    pitch_counts: dict[str, int] = field(default_factory=dict)
    energy_counts: dict[str, int] = field(default_factory=dict)
    tempo_counts: dict[str, int] = field(default_factory=dict)
    emotion_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def format_table(self) -> str:
        lines = [
            f"dialogues        {self.dialog_count}",
            f"utterances       {self.utterance_count}",
            f"total hours      {self.total_hours:.4f}",
        ]

        def row(name: str, counts: dict[str, int], keys: Iterable[str]) -> str:
            if not counts:
                return f"{name:<16} n/a"
            cells = "  ".join(f"{k}:{counts.get(k, 0)}" for k in keys)
            return f"{name:<16} {cells}"

        lines.append(row("gender", self.gender_counts, GENDERS))
        lines.append(row("pitch", self.pitch_counts, LEVELS))
        lines.append(row("energy", self.energy_counts, LEVELS))
        lines.append(row("tempo", self.tempo_counts, LEVELS))
        lines.append(row("emotion", self.emotion_counts, EMOTIONS))
        return "\n".join(lines)


def _resolve_manifest_path(path: str | Path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    return path


def load_corpus(path: str | Path) -> list[DialogueSession]:
    """Load and validate a JSONL manifest of dialogue sessions."""
    manifest = _resolve_manifest_path(path)
    base_dir = manifest.parent.resolve()
    sessions: list[DialogueSession] = []
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{manifest}: line {lineno}: invalid JSON: {exc}") from exc
            try:
                session = DialogueSession.from_record(rec, base_dir)
            except ValidationError:
                raise
            except (KeyError, TypeError) as exc:
                raise ManifestError(f"{manifest}: line {lineno}: malformed record: {exc}") from exc
            for turn in session.turns:
                if turn.audio_path is not None and not turn.audio_path.exists():
                    raise ManifestError(
                        f"{manifest}: line {lineno}: session {session.session_id!r} "
                        f"references missing audio {turn.audio_path}"
                    )
            sessions.append(session)
    return sessions


def save_corpus(sessions: Iterable[DialogueSession], path: str | Path) -> Path:
    """Write sessions as a JSONL manifest; audio paths made relative to it."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    base_dir = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as fh:
        for session in sessions:
            fh.write(json.dumps(session.to_record(base_dir), sort_keys=True))
            fh.write("\n")
    return path


def split_corpus(
    sessions: list[DialogueSession], spec: SplitSpec
) -> tuple[list[DialogueSession], list[DialogueSession], list[DialogueSession]]:
    """Deterministic session-level split into (train, valid, test)."""
    n = len(sessions)
    nonzero = [i for i, r in enumerate(spec.ratios) if r > 0]
    if n < len(nonzero):
        raise ValueError(f"{n} sessions cannot fill {len(nonzero)} nonzero partitions")

    # largest-remainder apportionment, then top up empty nonzero partitions
    exact = [n * r for r in spec.ratios]
    sizes = [int(x) for x in exact]
    remainders = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in remainders:
        if sum(sizes) >= n:
            break
        sizes[i] += 1
    for i in nonzero:
        while sizes[i] == 0:
            donor = max(range(3), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] += 1

    order = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [sessions[int(i)] for i in order]
    train = shuffled[: sizes[0]]
    valid = shuffled[sizes[0] : sizes[0] + sizes[1]]
    test = shuffled[sizes[0] + sizes[1] :]
    return train, valid, test


def window_context(
    session: DialogueSession, max_turns: int
) -> list[tuple[list[Utterance], Utterance]]:
    """One (history, target) pair per agent turn, history capped at max_turns-1."""
    if max_turns < 1:
        raise ValueError(f"max_turns must be >= 1, got {max_turns}")
    pairs = []
    for i, turn in enumerate(session.turns):
        if turn.role != "agent":
            continue
        history = list(session.turns[max(0, i - (max_turns - 1)) : i])
        pairs.append((history, turn))
    return pairs


def corpus_stats(sessions: list[DialogueSession]) -> CorpusStats:
    stats = CorpusStats(dialog_count=len(sessions))
    total_seconds = 0.0
    for session in sessions:
        for turn in session.turns:
            stats.utterance_count += 1
            if turn.emotion is not None:
                stats.emotion_counts[turn.emotion] = stats.emotion_counts.get(turn.emotion, 0) + 1
            if turn.style is not None:
                s = turn.style
                stats.gender_counts[s.gender] = stats.gender_counts.get(s.gender, 0) + 1
                for factor, bucket in (
                    ("pitch", stats.pitch_counts),
                    ("energy", stats.energy_counts),
                    ("tempo", stats.tempo_counts),
                ):
                    level = s.levels.get(factor)
                    if level is not None:
                        bucket[level] = bucket.get(level, 0) + 1
            if turn.audio_path is not None:
                try:
                    total_seconds += audio.wav_duration_seconds(turn.audio_path)
                except (OSError, ValueError, EOFError) as exc:
                    log.warning("skipping unreadable audio %s: %s", turn.audio_path, exc)
    stats.total_hours = total_seconds / 3600.0
    return stats
