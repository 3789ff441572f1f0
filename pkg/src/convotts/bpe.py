"""Byte-level byte-pair encoding trained from scratch.

The base alphabet is the full 256-byte range, so any string encodes without
unknown symbols. Merges are learned greedily on pair counts with a
deterministic tie-break (highest count, then lowest pair), and training stops
early once no adjacent pair occurs at least twice.
"""

from __future__ import annotations

import json
import unicodedata
from pathlib import Path

_BASE_VOCAB = 256


def _apply_merge(seq: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out: list[int] = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


class ByteBPE:
    """A trained BPE model: an ordered merge list over byte ids."""

    def __init__(self, merges: list[tuple[int, int]] | None = None):
        self.merges: list[tuple[int, int]] = [tuple(m) for m in (merges or [])]
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        # id -> byte string it expands to
        self.vocab: dict[int, bytes] = {i: bytes([i]) for i in range(_BASE_VOCAB)}
        for i, (a, b) in enumerate(self.merges):
            new_id = _BASE_VOCAB + i
            if a not in self.vocab or b not in self.vocab:
                raise ValueError(f"merge {i} references unknown id ({a}, {b})")
            self.vocab[new_id] = self.vocab[a] + self.vocab[b]

    @property
    def vocab_size(self) -> int:
        return _BASE_VOCAB + len(self.merges)

    @classmethod
    def train(cls, texts: list[str], vocab_size: int) -> "ByteBPE":
        if not texts:
            raise ValueError("training corpus is empty")
        if vocab_size < _BASE_VOCAB:
            raise ValueError(
                f"vocab_size must be at least {_BASE_VOCAB} (the byte alphabet), got {vocab_size}"
            )
        seqs = [list(unicodedata.normalize("NFC", t).encode("utf-8")) for t in texts]
        merges: list[tuple[int, int]] = []
        while _BASE_VOCAB + len(merges) < vocab_size:
            counts: dict[tuple[int, int], int] = {}
            for seq in seqs:
                for a, b in zip(seq, seq[1:]):
                    counts[(a, b)] = counts.get((a, b), 0) + 1
            if not counts:
                break
            best = max(counts.items(), key=lambda kv: (kv[1], (-kv[0][0], -kv[0][1])))
            if best[1] < 2:
                break
            pair = best[0]
            new_id = _BASE_VOCAB + len(merges)
            merges.append(pair)
            seqs = [_apply_merge(s, pair, new_id) for s in seqs]
        return cls(merges)

    def encode(self, text: str) -> list[int]:
        ids = list(unicodedata.normalize("NFC", text).encode("utf-8"))
        while len(ids) >= 2:
            pairs = set(zip(ids, ids[1:]))
            ranked = [(self._ranks[p], p) for p in pairs if p in self._ranks]
            if not ranked:
                break
            rank, pair = min(ranked)
            ids = _apply_merge(ids, pair, _BASE_VOCAB + rank)
        return ids

    def decode(self, ids: list[int]) -> str:
        chunks = []
        for i in ids:
            if i not in self.vocab:
                raise ValueError(f"id {i} outside the BPE vocabulary (size {self.vocab_size})")
            chunks.append(self.vocab[i])
        return b"".join(chunks).decode("utf-8", errors="replace")

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"format": "byte_bpe_v1", "merges": [list(m) for m in self.merges]}
        path.write_text(json.dumps(payload, sort_keys=True, indent=0), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ByteBPE":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "byte_bpe_v1":
            raise ValueError(f"{path}: not a BPE model file")
        return cls([tuple(m) for m in payload["merges"]])
