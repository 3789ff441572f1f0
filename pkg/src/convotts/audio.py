"""Mono 16-bit PCM WAV reading and writing on top of the stdlib wave module."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

_PCM16_SCALE = 32768.0


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV file.

    Returns (samples, sample_rate) with samples as float64 in [-1, 1).
    """
    path = Path(path)
    with wave.open(str(path), "rb") as wf:
        n_channels = wf.getnchannels()
        sampwidth = wf.getsampwidth()
        if n_channels != 1:
            raise ValueError(f"{path}: expected mono audio, got {n_channels} channels")
        if sampwidth != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
        sr = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM16_SCALE
    return samples, sr


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] to a mono 16-bit PCM WAV file."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"expected a 1-d sample array, got shape {samples.shape}")
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate}")
    pcm = np.clip(np.round(samples * _PCM16_SCALE), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def wav_duration_seconds(path: str | Path) -> float:
    """Duration of a WAV file from its header, without reading the payload."""
    try:
        with wave.open(str(Path(path)), "rb") as wf:
            sr = wf.getframerate()
            if sr <= 0:
                raise ValueError(f"{path}: invalid sample rate {sr}")
            return wf.getnframes() / sr
    except wave.Error as exc:
        raise ValueError(f"{path}: not a readable WAV file: {exc}") from exc
