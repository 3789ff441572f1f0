"""Dialogue corpus loading, validation, splitting, windowing, stats."""

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convotts.audio import write_wav
from convotts.corpus import (
    EMOTIONS,
    DialogueSession,
    ManifestError,
    SplitSpec,
    StyleFactors,
    Utterance,
    ValidationError,
    corpus_stats,
    load_corpus,
    save_corpus,
    split_corpus,
    window_context,
)
from tests.conftest import make_session


def test_utterance_rejects_blank_text():
    with pytest.raises(ValidationError):
        Utterance(speaker_id="s", role="user", text="   ")


def test_utterance_rejects_unknown_emotion():
    with pytest.raises(ValidationError):
        Utterance(speaker_id="s", role="user", text="hi", emotion="joyful")


def test_utterance_accepts_all_eight_emotions():
    for emo in EMOTIONS:
        u = Utterance(speaker_id="s", role="user", text="hi", emotion=emo)
        assert u.emotion == emo
    assert len(EMOTIONS) == 8


def test_session_requires_user_first():
    agent = Utterance(speaker_id="a", role="agent", text="hi")
    with pytest.raises(ValidationError):
        DialogueSession(session_id="x", turns=[agent])


def test_session_rejects_consecutive_same_role():
    u1 = Utterance(speaker_id="a", role="user", text="one")
    u2 = Utterance(speaker_id="b", role="user", text="two")
    with pytest.raises(ValidationError) as exc:
        DialogueSession(session_id="sess9", turns=[u1, u2])
    assert "sess9" in str(exc.value)


def test_load_corpus_two_sessions(tmp_path):
    sessions = [make_session("a", 2), make_session("b", 4)]
    manifest = save_corpus(sessions, tmp_path / "m.jsonl")
    loaded = load_corpus(manifest)
    assert [s.session_id for s in loaded] == ["a", "b"]


def test_load_corpus_empty_manifest(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("", encoding="utf-8")
    assert load_corpus(p) == []


def test_load_corpus_malformed_line_names_line(tmp_path):
    good = {
        "session_id": "ok",
        "turns": [{"speaker_id": "u", "role": "user", "text": "hi"}],
    }
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(good) + "\nnot json\n", encoding="utf-8")
    with pytest.raises(ManifestError) as exc:
        load_corpus(p)
    assert "line 2" in str(exc.value)


def test_load_corpus_missing_manifest(tmp_path):
    with pytest.raises(ManifestError):
        load_corpus(tmp_path / "nope.jsonl")


def test_load_corpus_missing_audio_file(tmp_path):
    rec = {
        "session_id": "s",
        "turns": [{"speaker_id": "u", "role": "user", "text": "hi", "audio": "gone.wav"}],
    }
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    with pytest.raises(ManifestError):
        load_corpus(p)


def test_roundtrip_identity(tmp_path):
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    sessions = [make_session("r1", 4, with_audio_dir=audio_dir), make_session("r2", 2)]
    manifest = save_corpus(sessions, tmp_path / "m.jsonl")
    once = load_corpus(manifest)
    again = load_corpus(save_corpus(once, tmp_path / "m2.jsonl"))
    for s1, s2 in zip(once, again):
        assert s1.session_id == s2.session_id
        for t1, t2 in zip(s1.turns, s2.turns):
            assert (t1.speaker_id, t1.role, t1.text) == (t2.speaker_id, t2.role, t2.text)
            assert t1.caption == t2.caption and t1.emotion == t2.emotion


def test_style_factors_roundtrip():
    sf = StyleFactors(
        gender="female",
        pitch_hz=210.0,
        energy_rms=0.04,
        tempo_mpd=0.3,
        levels={"pitch": "high", "energy": "normal", "tempo": "normal"},
    )
    assert StyleFactors.from_dict(sf.to_dict()) == sf


def test_split_spec_validation():
    with pytest.raises(ValidationError):
        SplitSpec(ratios=(0.5, 0.5, 0.5), seed=0)
    with pytest.raises(ValidationError):
        SplitSpec(ratios=(1.2, -0.2, 0.0), seed=0)


def test_split_sizes_8_1_1():
    sessions = [make_session(f"s{i}", 2) for i in range(10)]
    train, valid, test = split_corpus(sessions, SplitSpec(ratios=(0.8, 0.1, 0.1), seed=0))
    assert (len(train), len(valid), len(test)) == (8, 1, 1)


def test_split_single_session_all_train():
    sessions = [make_session("only", 2)]
    train, valid, test = split_corpus(sessions, SplitSpec(ratios=(1.0, 0.0, 0.0), seed=3))
    assert [s.session_id for s in train] == ["only"] and valid == [] and test == []


def test_split_deterministic():
    sessions = [make_session(f"s{i}", 2) for i in range(20)]
    spec = SplitSpec(ratios=(0.8, 0.1, 0.1), seed=42)
    a = split_corpus(sessions, spec)
    b = split_corpus(sessions, spec)
    for part_a, part_b in zip(a, b):
        assert [s.session_id for s in part_a] == [s.session_id for s in part_b]


def test_split_too_few_sessions():
    with pytest.raises(ValueError):
        split_corpus([make_session("s", 2)], SplitSpec(ratios=(0.8, 0.1, 0.1), seed=0))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(min_value=1, max_value=100), seed=st.integers(0, 2**31 - 1))
def test_split_partition_property(n, seed):
    # disjoint and exhaustive at session granularity, any corpus size
    sessions = [make_session(f"s{i}", 2) for i in range(n)]
    ratios = (0.6, 0.2, 0.2) if n >= 3 else (1.0, 0.0, 0.0)
    parts = split_corpus(sessions, SplitSpec(ratios=ratios, seed=seed))
    ids = [s.session_id for part in parts for s in part]
    assert sorted(ids) == sorted(s.session_id for s in sessions)
    assert len(set(ids)) == len(ids)


def test_window_context_six_turns_n3():
    session = make_session("w", 6)
    pairs = window_context(session, 3)
    # one pair per agent turn (turns 1, 3, 5)
    assert len(pairs) == 3
    for history, target in pairs:
        assert target.role == "agent"
        assert len(history) <= 2
        # chronological order within the window
        idx = [session.turns.index(h) for h in history]
        assert idx == sorted(idx)


def test_window_context_n1_empty_history():
    pairs = window_context(make_session("w", 4), 1)
    assert all(history == [] for history, _ in pairs)


def test_window_context_truncates_to_available():
    pairs = window_context(make_session("w", 2), 4)
    assert len(pairs) == 1
    history, target = pairs[0]
    assert len(history) == 1 and history[0].role == "user" and target.role == "agent"


@settings(max_examples=30, deadline=None)
@given(n_turns=st.integers(1, 12), window=st.integers(1, 5))
def test_window_context_count_equals_agent_turns(n_turns, window):
    session = make_session("p", n_turns)
    pairs = window_context(session, window)
    assert len(pairs) == sum(1 for t in session.turns if t.role == "agent")


def test_stats_emotion_counts():
    base = make_session("e", 4)
    turns = tuple(
        dataclasses.replace(t, emotion=emo)
        for t, emo in zip(base.turns, ["Happy", "Happy", "Sad", "Neutral"])
    )
    stats = corpus_stats([DialogueSession(session_id="e", turns=turns)])
    assert stats.emotion_counts["Happy"] == 2
    assert stats.emotion_counts["Sad"] == 1
    assert stats.utterance_count == 4


def test_stats_empty_corpus():
    stats = corpus_stats([])
    assert stats.utterance_count == 0 and stats.dialog_count == 0
    assert stats.total_hours == 0.0


def test_stats_hours_from_durations(tmp_path):
    sr = 22050
    turns = []
    for i, dur in enumerate([1.0, 2.0]):
        p = tmp_path / f"t{i}.wav"
        write_wav(p, np.zeros(int(dur * sr)), sr)
        turns.append(
            Utterance(
                speaker_id="s",
                role="user" if i == 0 else "agent",
                text=f"t{i}",
                audio_path=p,
            )
        )
    stats = corpus_stats([DialogueSession(session_id="h", turns=turns)])
    assert math.isclose(stats.total_hours, 3.0 / 3600.0, rel_tol=1e-9)


def test_stats_table_and_json_agree():
    base = make_session("j", 2)
    turns = (dataclasses.replace(base.turns[0], emotion="Happy"), base.turns[1])
    stats = corpus_stats([DialogueSession(session_id="j", turns=turns)])
    table = stats.format_table()
    as_dict = stats.to_dict()
    assert str(as_dict["utterance_count"]) in table
    assert "Happy" in table
