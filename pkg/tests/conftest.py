"""Shared fixtures: synthetic sessions, waveforms, and tiny vocabularies."""

import numpy as np
import pytest

from convotts.audio import write_wav
from convotts.corpus import DialogueSession, Utterance
from convotts.tokenizer import SPEAKER_DIM, TurnTokens, VocabSpec
from convotts.toydata import make_toy_corpus, synth_voice


def make_session(session_id: str, n_turns: int, with_audio_dir=None, sample_rate=22050):
    """Alternating user/agent session; writes short wavs when a dir is given."""
    turns = []
    for i in range(n_turns):
        role = "user" if i % 2 == 0 else "agent"
        audio = None
        if with_audio_dir is not None:
            audio = with_audio_dir / f"{session_id}_t{i}.wav"
            f0 = 220.0 if role == "user" else 115.0
            wav = synth_voice(f0, 0.6, sample_rate, 0.04, seed=hash((session_id, i)) % 1000)
            write_wav(audio, wav, sample_rate)
        turns.append(
            Utterance(
                speaker_id=f"spk_{role}",
                role=role,
                text=f"utterance {i} of {session_id}",
                audio_path=audio,
            )
        )
    return DialogueSession(session_id=session_id, turns=tuple(turns))


def speaker_vec(seed: int = 0) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(SPEAKER_DIM)
    return v / np.linalg.norm(v)


def make_turn(vocab: VocabSpec, seed: int, n_text=3, n_codes=4, n_caption=3) -> TurnTokens:
    rng = np.random.default_rng(seed)
    return TurnTokens(
        speaker_vector=speaker_vec(seed),
        text_ids=tuple(int(x) for x in rng.integers(0, vocab.bpe_vocab_size, n_text)),
        codes=tuple(int(x) for x in rng.integers(0, vocab.code_vocab_size, n_codes)),
        caption_ids=tuple(int(x) for x in rng.integers(0, vocab.bpe_vocab_size, n_caption)),
    )


@pytest.fixture
def tiny_vocab() -> VocabSpec:
    return VocabSpec(bpe_vocab_size=40, code_vocab_size=8)


@pytest.fixture(scope="session")
def toy_corpus_dir(tmp_path_factory):
    """8-session synthetic corpus shared by the slower integration tests."""
    root = tmp_path_factory.mktemp("toycorpus")
    manifest = make_toy_corpus(root, n_sessions=8, seed=0)
    return manifest
