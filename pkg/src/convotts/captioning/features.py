"""Waveform style measurements: pitch, energy, tempo, and level bucketing.

Pitch is estimated with normalized autocorrelation per frame (FFT-based),
refined by parabolic interpolation around the best lag; frames whose
periodicity ratio clears 0.5 count as voiced. Energy is the mean per-frame
RMS of [-1, 1] samples. Tempo is the mean phone duration from a forced
alignment when available, else utterance duration over the text's vowel-group
count, flagged approximate.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corpus import StyleFactors


@dataclass(frozen=True)
class AttributeThresholds:
    """(low/normal, normal/high) boundaries per attribute; boundary -> normal."""

    pitch: tuple[float, float] = (136.577, 196.098)
    tempo: tuple[float, float] = (0.252, 0.386)
    energy: tuple[float, float] = (0.033, 0.0505)

    def __post_init__(self) -> None:
        for name in ("pitch", "tempo", "energy"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} boundaries must increase, got ({lo}, {hi})")

    def to_dict(self) -> dict:
        return {"pitch": list(self.pitch), "tempo": list(self.tempo), "energy": list(self.energy)}

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeThresholds":
        return cls(
            pitch=tuple(d["pitch"]), tempo=tuple(d["tempo"]), energy=tuple(d["energy"])
        )


DEFAULT_THRESHOLDS = AttributeThresholds()


def classify_level(value: float, boundaries: tuple[float, float]) -> str:
    lo, hi = boundaries
    if not lo < hi:
        raise ValueError(f"boundaries must increase, got ({lo}, {hi})")
    if value < lo:
        return "low"
    if value > hi:
        return "high"
    return "normal"


def _frame_signal(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    if x.size < frame:
        return x[None, :]
    n = 1 + (x.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _autocorrelation(frame: np.ndarray) -> np.ndarray:
    n = frame.size
    spec = np.fft.rfft(frame, n=2 * n)
    return np.fft.irfft(spec * np.conj(spec), n=2 * n)[:n].real


def pitch_contour(
    waveform: np.ndarray,
    sample_rate: int,
    fmin: float = 60.0,
    fmax: float = 600.0,
    frame_seconds: float = 0.046,
    hop_seconds: float = 0.010,
    voicing_threshold: float = 0.5,
) -> tuple[np.ndarray, float]:
    """Per-frame F0 in Hz (0 = unvoiced); returns (values, hop_seconds)."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty waveform")
    frame_len = max(int(frame_seconds * sample_rate), int(2 * sample_rate / fmin))
    hop = max(1, int(hop_seconds * sample_rate))
    frames = _frame_signal(x, frame_len, hop)
    lag_min = max(2, int(sample_rate / fmax))
    lag_max = min(frames.shape[1] - 2, int(np.ceil(sample_rate / fmin)))
    f0 = np.zeros(frames.shape[0])
    if lag_max <= lag_min:
        return f0, hop / sample_rate
    for i, fr in enumerate(frames):
        fr = fr - fr.mean()
        if np.sqrt(np.mean(fr**2)) < 1e-4:
            continue  # silence stays unvoiced
        r = _autocorrelation(fr)
        if r[0] <= 0:
            continue
        r = r / r[0]
        seg = r[lag_min : lag_max + 1]
        k = int(np.argmax(seg))
        lag = lag_min + k
        peak = r[lag]
        if peak <= voicing_threshold:
            continue
        # parabolic refinement around the integer lag
        denom = r[lag - 1] - 2.0 * r[lag] + r[lag + 1]
        if abs(denom) > 1e-12:
            delta = 0.5 * (r[lag - 1] - r[lag + 1]) / denom
            delta = float(np.clip(delta, -0.5, 0.5))
        else:
            delta = 0.0
        f0[i] = sample_rate / (lag + delta)
    return f0, hop / sample_rate


def extract_pitch(waveform: np.ndarray, sample_rate: int) -> float:
    """Mean F0 over voiced frames; 0.0 when fully unvoiced."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.size / sample_rate < 0.1:
        raise ValueError("need at least 0.1 s of audio for pitch estimation")
    f0, _ = pitch_contour(x, sample_rate)
    voiced = f0[f0 > 0]
    return float(voiced.mean()) if voiced.size else 0.0


def extract_energy(
    waveform: np.ndarray,
    sample_rate: int,
    frame_seconds: float = 0.025,
    hop_seconds: float = 0.010,
) -> float:
    """Mean per-frame RMS of normalized samples."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty waveform")
    frames = _frame_signal(x, int(frame_seconds * sample_rate), max(1, int(hop_seconds * sample_rate)))
    rms = np.sqrt(np.mean(frames**2, axis=1))
    return float(rms.mean())


def parse_alignment(path: str | Path) -> list[tuple[str, float, float]]:
    """Read a (phone, start_s, end_s) tab-separated alignment file."""
    path = Path(path)
    phones: list[tuple[str, float, float]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}: line {lineno}: expected 3 tab-separated fields")
        phone, start, end = parts
        start_s, end_s = float(start), float(end)
        if end_s < start_s:
            raise ValueError(f"{path}: line {lineno}: end before start")
        phones.append((phone, start_s, end_s))
    if not phones:
        raise ValueError(f"{path}: alignment has no phone entries")
    return phones


def tempo_from_alignment(phones: list[tuple[str, float, float]]) -> float:
    durs = [end - start for _, start, end in phones]
    return float(np.mean(durs))


_VOWEL_RUN = re.compile(r"[aeiou]+", flags=re.IGNORECASE)


def vowel_groups(text: str) -> int:
    """Maximal vowel runs in the text; crude syllable-count stand-in."""
    return len(_VOWEL_RUN.findall(text))


def estimate_tempo(
    duration_seconds: float,
    text: str | None = None,
    alignment: list[tuple[str, float, float]] | None = None,
) -> tuple[float, bool]:
    """Mean phone duration; (value, approximate_flag)."""
    if alignment is not None:
        return tempo_from_alignment(alignment), False
    if text is None:
        raise ValueError("tempo needs an alignment or the utterance text")
    groups = max(vowel_groups(text), 1)
    return duration_seconds / groups, True


def measure_style(
    waveform: np.ndarray,
    sample_rate: int,
    text: str,
    gender: str,
    thresholds: AttributeThresholds = DEFAULT_THRESHOLDS,
    alignment: list[tuple[str, float, float]] | None = None,
) -> StyleFactors:
    """Full sentence-level style measurement with bucketed levels."""
    pitch_hz = extract_pitch(waveform, sample_rate)
    energy_rms = extract_energy(waveform, sample_rate)
    duration = np.asarray(waveform).size / sample_rate
    tempo_mpd, approx = estimate_tempo(duration, text=text, alignment=alignment)
    return StyleFactors(
        gender=gender,
        pitch_hz=pitch_hz,
        energy_rms=energy_rms,
        tempo_mpd=tempo_mpd,
        levels={
            "pitch": classify_level(pitch_hz, thresholds.pitch),
            "energy": classify_level(energy_rms, thresholds.energy),
            "tempo": classify_level(tempo_mpd, thresholds.tempo),
        },
        tempo_approximate=approx,
    )
