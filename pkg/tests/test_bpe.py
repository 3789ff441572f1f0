"""Byte-level BPE: textbook merge oracle, round-trips, determinism."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convotts.bpe import ByteBPE


def test_learns_aa_merge():
    # hand-run textbook BPE on ["aa aa"]: most frequent adjacent pair is
    # ("a", "a"), so the first merge yields a single token for "aa"
    model = ByteBPE.train(["aa aa"], vocab_size=260)
    ids = model.encode("aa")
    assert len(ids) == 1


def test_roundtrip_hello():
    model = ByteBPE.train(["hello world"], vocab_size=280)
    assert model.decode(model.encode("hello")) == "hello"


def test_roundtrip_on_training_texts():
    texts = ["the cat sat", "the dog ran", "a cat and a dog"]
    model = ByteBPE.train(texts, vocab_size=300)
    for t in texts:
        assert model.decode(model.encode(t)) == t


def test_deterministic_training():
    texts = ["abc abc abd", "bcd bcd"]
    a = ByteBPE.train(texts, vocab_size=290)
    b = ByteBPE.train(texts, vocab_size=290)
    assert a.merges == b.merges


def test_vocab_size_too_small():
    with pytest.raises(ValueError):
        ByteBPE.train(["abc"], vocab_size=3)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        ByteBPE.train([], vocab_size=300)


def test_vocab_size_property():
    model = ByteBPE.train(["aa aa aa"], vocab_size=258)
    assert model.vocab_size == 258
    assert len(model.merges) == 2


def test_encode_unseen_text_still_roundtrips():
    model = ByteBPE.train(["aa bb"], vocab_size=258)
    # unseen byte sequences fall back to raw bytes
    assert model.decode(model.encode("zq xw")) == "zq xw"


def test_unicode_roundtrip():
    model = ByteBPE.train(["héllo wörld"], vocab_size=280)
    assert model.decode(model.encode("héllo")) == "héllo"


def test_save_load_roundtrip(tmp_path):
    model = ByteBPE.train(["the quick brown fox", "the lazy dog"], vocab_size=300)
    path = tmp_path / "bpe.json"
    model.save(path)
    loaded = ByteBPE.load(path)
    assert loaded.merges == model.merges
    text = "the quick dog"
    assert loaded.encode(text) == model.encode(text)


@settings(max_examples=60, deadline=None)
@given(st.text(min_size=0, max_size=40))
def test_roundtrip_property(text):
    model = ByteBPE.train(["a corpus with some shared substrings", "substrings repeat"], 290)
    assert model.decode(model.encode(text)) == text


@settings(max_examples=20, deadline=None)
@given(
    texts=st.lists(st.text(min_size=1, max_size=20), min_size=1, max_size=5),
    extra=st.integers(0, 30),
)
def test_ids_within_vocab(texts, extra):
    vocab_size = 256 + extra
    model = ByteBPE.train(texts, vocab_size=vocab_size)
    for t in texts:
        assert all(0 <= i < model.vocab_size for i in model.encode(t))
