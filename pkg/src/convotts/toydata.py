"""Deterministic synthetic dialogue corpus for tests and demos.

Each session is one user/agent exchange of short harmonic-voice clips. Female
speakers sit above the high-pitch threshold, male speakers below the low one,
and per-emotion loudness targets spread utterances across all three energy
levels, so the style classifier has something to disagree about.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import write_wav
from .corpus import DialogueSession, Utterance, save_corpus

# (user text, user emotion, agent text, agent emotion); keywords chosen so a
# keyword-matching classifier reproduces the labels
TOY_EXCHANGES: tuple[tuple[str, str, str, str], ...] = (
    ("What a wonderful day, I feel so happy.", "Happy",
     "Glad to hear it, enjoy the sunshine.", "Happy"),
    ("I am furious about the late delivery.", "Angry",
     "Let me check the order for you now.", "Neutral"),
    ("I feel sad about the cancelled trip.", "Sad",
     "I am sorrowful to hear that news.", "Sad"),
    ("I am scared of the storm tonight.", "Fear",
     "Stay calm, it will pass before morning.", "Neutral"),
    ("That is unbelievable, I am amazed.", "Surprised",
     "It surprised everyone on the team too.", "Surprised"),
    ("The meeting starts at nine tomorrow.", "Neutral",
     "Noted, the room is booked already.", "Neutral"),
    ("This mess fills me with rage.", "Angry",
     "I understand, we will fix it today.", "Neutral"),
    ("I am delighted with the new results.", "Happy",
     "They look joyful on every chart.", "Happy"),
)

# target mean frame RMS per emotion; thresholds are low<0.033, high>0.0505
_ENERGY_TARGET = {
    "Angry": 0.09,
    "Surprised": 0.09,
    "Happy": 0.042,
    "Neutral": 0.042,
    "Contempt": 0.042,
    "Disgusted": 0.042,
    "Sad": 0.02,
    "Fear": 0.02,
}


def synth_voice(
    f0: float,
    duration: float,
    sample_rate: int,
    target_rms: float,
    seed: int,
) -> np.ndarray:
    """A harmonic stack with mild vibrato and amplitude modulation."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    vibrato = 1.0 + 0.015 * np.sin(2 * np.pi * 5.3 * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / sample_rate
    x = np.zeros(n)
    for k in range(1, 7):
        x += (0.7 ** (k - 1)) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    x *= 1.0 + 0.2 * np.sin(2 * np.pi * 3.5 * t + rng.uniform(0, 2 * np.pi))
    edge = max(1, int(0.03 * sample_rate))
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, edge))
    env[:edge] = ramp
    env[-edge:] = ramp[::-1]
    x *= env
    rms = float(np.sqrt(np.mean(np.square(x))))
    x *= target_rms / max(rms, 1e-12)
    return np.clip(x, -0.999, 0.999)


def make_toy_corpus(
    root: str | Path,
    n_sessions: int = 8,
    sample_rate: int = 22050,
    seed: int = 0,
) -> Path:
    """Write wav files plus a manifest under root; returns the manifest path."""
    root = Path(root)
    audio_dir = root / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    sessions = []
    for s in range(n_sessions):
        user_text, user_emotion, agent_text, agent_emotion = TOY_EXCHANGES[
            s % len(TOY_EXCHANGES)
        ]
        user_speaker = f"spk_f{s % 2}"
        agent_speaker = f"spk_m{s % 2}"
        turns = []
        for role, speaker, text, emotion in (
            ("user", user_speaker, user_text, user_emotion),
            ("agent", agent_speaker, agent_text, agent_emotion),
        ):
            gender = "female" if role == "user" else "male"
            f0 = rng.uniform(205.0, 230.0) if gender == "female" else rng.uniform(110.0, 125.0)
            duration = rng.uniform(0.55, 0.9)
            wav = synth_voice(
                f0,
                duration,
                sample_rate,
                _ENERGY_TARGET[emotion],
                seed=int(rng.integers(0, 2**31 - 1)),
            )
            wav_path = audio_dir / f"s{s:03d}_{role}.wav"
            write_wav(wav_path, wav, sample_rate)
            turns.append(
                Utterance(
                    speaker_id=speaker,
                    role=role,
                    text=text,
                    audio_path=wav_path,
                    gender=gender,
                )
            )
        sessions.append(DialogueSession(session_id=f"toy{s:03d}", turns=tuple(turns)))

    return save_corpus(sessions, root / "manifest.jsonl")
