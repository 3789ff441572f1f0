"""Decoder-only transformer over the unified token space.

One model handles both prediction phases: given the dialogue context it first
emits the target turn's expressive caption (stopping at CAPTION_END), then the
semantic speech codes (stopping at CODES_END). Training supervises exactly
those two spans with separate masked cross-entropy terms whose sum is the
total loss. Decoding constrains each phase to its sub-vocabulary and applies
top-k sampling with a windowed repetition rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import SemanticCodes
from .tokenizer import TokenSequence, TrainingTarget, VocabSpec


@dataclass(frozen=True)
class LMConfig:
    n_layers: int = 2
    model_dim: int = 128
    n_heads: int = 4
    max_seq_len: int = 512
    dropout_rate: float = 0.1
    speaker_dim: int = 192
    mlp_ratio: int = 4

    def __post_init__(self) -> None:
        if self.model_dim % self.n_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"bad dropout_rate {self.dropout_rate}")

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "model_dim": self.model_dim,
            "n_heads": self.n_heads,
            "max_seq_len": self.max_seq_len,
            "dropout_rate": self.dropout_rate,
            "speaker_dim": self.speaker_dim,
            "mlp_ratio": self.mlp_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LMConfig":
        return cls(**d)


@dataclass(frozen=True)
class SamplingConfig:
    top_k: int = 25
    win_size: int = 10
    tau_r: float = 0.1
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.win_size < 1:
            raise ValueError(f"win_size must be >= 1, got {self.win_size}")
        if not 0.0 <= self.tau_r <= 1.0:
            raise ValueError(f"tau_r must lie in [0, 1], got {self.tau_r}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class ChainOutput:
    caption_ids: tuple[int, ...]
    codes: SemanticCodes
    caption_stop: str  # "caption_end" | "max_length" | "skipped"
    code_stop: str  # "codes_end" | "max_length"


class _Block(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.qkv = nn.Linear(cfg.model_dim, 3 * cfg.model_dim)
        self.attn_out = nn.Linear(cfg.model_dim, cfg.model_dim)
        hidden = cfg.mlp_ratio * cfg.model_dim
        self.mlp = nn.Sequential(
            nn.Linear(cfg.model_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, cfg.model_dim),
        )
        self.drop = nn.Dropout(cfg.dropout_rate)
        self.n_heads = cfg.n_heads

    def forward(self, x: torch.Tensor, causal_bias: torch.Tensor) -> torch.Tensor:
        b, L, d = x.shape
        h = self.ln1(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        hd = d // self.n_heads

        def split(t):
            return t.view(b, L, self.n_heads, hd).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        scores = (q @ k.transpose(-1, -2)) / (hd**0.5) + causal_bias
        attn = self.drop(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, L, d)
        x = x + self.drop(self.attn_out(ctx))
        x = x + self.drop(self.mlp(self.ln2(x)))
        return x


class DialogueLM(nn.Module):
    """Causal transformer with a learned-projection slot for speaker vectors."""

    def __init__(self, config: LMConfig, vocab: VocabSpec):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.token_embedding = nn.Embedding(vocab.total_size, config.model_dim)
        self.position_embedding = nn.Embedding(config.max_seq_len, config.model_dim)
        self.speaker_projection = nn.Linear(config.speaker_dim, config.model_dim)
        self.drop = nn.Dropout(config.dropout_rate)
        self.blocks = nn.ModuleList(_Block(config) for _ in range(config.n_layers))
        self.final_norm = nn.LayerNorm(config.model_dim)
        self.head = nn.Linear(config.model_dim, vocab.total_size)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    def forward(
        self,
        ids: torch.Tensor,
        speaker_vectors: torch.Tensor | None = None,
        speaker_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Logits [B, L, V]; position i attends only to positions <= i.

        speaker_vectors: [B, L, speaker_dim], read where speaker_mask is True.
        """
        if ids.ndim != 2:
            raise ValueError(f"ids must be [B, L], got {tuple(ids.shape)}")
        b, L = ids.shape
        if L > self.config.max_seq_len:
            raise ValueError(
                f"sequence length {L} exceeds max_seq_len {self.config.max_seq_len}"
            )
        dtype = self.token_embedding.weight.dtype
        x = self.token_embedding(ids)
        if speaker_mask is not None and speaker_mask.any():
            if speaker_vectors is None:
                raise ValueError("speaker_mask set but no speaker_vectors given")
            proj = self.speaker_projection(speaker_vectors.to(dtype))
            x = torch.where(speaker_mask.unsqueeze(-1), proj, x)
        pos = torch.arange(L, device=ids.device)
        x = self.drop(x + self.position_embedding(pos)[None, :, :])
        causal_bias = torch.full((L, L), float("-inf"), dtype=dtype, device=ids.device)
        causal_bias = torch.triu(causal_bias, diagonal=1)
        for block in self.blocks:
            x = block(x, causal_bias)
        return self.head(self.final_norm(x))


def chain_loss_tensors(
    logits: torch.Tensor,
    target_ids: torch.Tensor,
    caption_mask: torch.Tensor,
    speech_mask: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(L_caption, L_speech, total) over masked positions of a batch."""
    if torch.any(caption_mask & speech_mask):
        raise ValueError("caption and speech masks overlap")
    n_cap = int(caption_mask.sum())
    n_sp = int(speech_mask.sum())
    if n_cap == 0 and n_sp == 0:
        raise ValueError("both loss masks are empty")
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_ids = target_ids.reshape(-1)
    flat_cap = caption_mask.reshape(-1)
    flat_sp = speech_mask.reshape(-1)
    zero = logits.sum() * 0.0  # typed/deviced zero that keeps the graph intact
    l_cap = (
        F.cross_entropy(flat_logits[flat_cap], flat_ids[flat_cap]) if n_cap else zero
    )
    l_sp = F.cross_entropy(flat_logits[flat_sp], flat_ids[flat_sp]) if n_sp else zero
    return l_cap, l_sp, l_cap + l_sp


def chain_loss(
    logits: torch.Tensor, target: TrainingTarget
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Single-sequence convenience wrapper; logits [L, V]."""
    return chain_loss_tensors(
        logits,
        torch.as_tensor(target.target_ids, dtype=torch.long),
        torch.as_tensor(target.caption_mask, dtype=torch.bool),
        torch.as_tensor(target.speech_mask, dtype=torch.bool),
    )


def collate_targets(
    targets: Sequence[TrainingTarget], vocab: VocabSpec, dtype: torch.dtype = torch.float32
) -> dict[str, torch.Tensor]:
    """Right-pad a batch; pads stay outside both loss masks."""
    if not targets:
        raise ValueError("empty batch")
    L = max(len(t.input_ids) for t in targets)
    b = len(targets)
    spk_dim = targets[0].speaker_vectors.shape[1]
    out = {
        "input_ids": torch.zeros(b, L, dtype=torch.long),
        "target_ids": torch.zeros(b, L, dtype=torch.long),
        "caption_mask": torch.zeros(b, L, dtype=torch.bool),
        "speech_mask": torch.zeros(b, L, dtype=torch.bool),
        "speaker_vectors": torch.zeros(b, L, spk_dim, dtype=dtype),
        "speaker_mask": torch.zeros(b, L, dtype=torch.bool),
    }
    for i, t in enumerate(targets):
        n = len(t.input_ids)
        out["input_ids"][i, :n] = torch.as_tensor(t.input_ids)
        out["target_ids"][i, :n] = torch.as_tensor(t.target_ids)
        out["caption_mask"][i, :n] = torch.as_tensor(t.caption_mask)
        out["speech_mask"][i, :n] = torch.as_tensor(t.speech_mask)
        for slot, pos in enumerate(t.speaker_positions):
            out["speaker_vectors"][i, pos] = torch.as_tensor(
                t.speaker_vectors[slot], dtype=dtype
            )
            out["speaker_mask"][i, pos] = True
    return out


def train_step(
    model: DialogueLM,
    batch: dict[str, torch.Tensor],
    optimizer: torch.optim.Optimizer,
    caption_loss_weight: float = 1.0,
    grad_clip: float | None = 1.0,
) -> tuple[float, float]:
    """One teacher-forced update on weighted total loss; returns raw loss values."""
    model.train()
    logits = model(batch["input_ids"], batch["speaker_vectors"], batch["speaker_mask"])
    l_cap, l_sp, _ = chain_loss_tensors(
        logits, batch["target_ids"], batch["caption_mask"], batch["speech_mask"]
    )
    total = caption_loss_weight * l_cap + l_sp
    if not torch.isfinite(total):
        raise RuntimeError(
            f"non-finite training loss: caption={float(l_cap)!r} speech={float(l_sp)!r} "
            f"batch_shape={tuple(batch['input_ids'].shape)}"
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(l_cap.detach()), float(l_sp.detach())


def sample_token(
    logits_row: torch.Tensor,
    recent: Sequence[int],
    cfg: SamplingConfig,
    generator: torch.Generator,
    allowed_ids: torch.Tensor,
) -> int:
    """Top-k draw over the allowed ids with a windowed repetition rule.

    If the drawn token already occurs in the last win_size emitted tokens more
    than tau_r * win_size times, one uniform redraw is taken from the other
    top-k candidates (the draw stands when no other candidate exists).
    """
    if allowed_ids.numel() == 0:
        raise ValueError("no ids allowed in this phase")
    masked = torch.full_like(logits_row, float("-inf"))
    masked[allowed_ids] = logits_row[allowed_ids] / cfg.temperature
    k = min(cfg.top_k, int(allowed_ids.numel()))
    top_vals, top_ids = torch.topk(masked, k)
    probs = torch.softmax(top_vals, dim=-1)
    draw = int(torch.multinomial(probs, 1, generator=generator))
    token = int(top_ids[draw])

    window = list(recent)[-cfg.win_size :]
    if window.count(token) > cfg.tau_r * cfg.win_size:
        others = top_ids[top_ids != token]
        if others.numel() > 0:
            pick = int(torch.randint(others.numel(), (1,), generator=generator))
            token = int(others[pick])
    return token


def _prompt_tensors(
    model: DialogueLM, seq: TokenSequence
) -> tuple[list[int], torch.Tensor, torch.Tensor]:
    dtype = model.token_embedding.weight.dtype
    ids = list(seq.ids)
    positions = seq.speaker_positions()
    spk = torch.zeros(1, model.config.max_seq_len, model.config.speaker_dim, dtype=dtype)
    mask = torch.zeros(1, model.config.max_seq_len, dtype=torch.bool)
    for slot, pos in enumerate(positions):
        spk[0, pos] = torch.as_tensor(seq.speaker_vectors[slot], dtype=dtype)
        mask[0, pos] = True
    return ids, spk, mask


def _generate_phase(
    model: DialogueLM,
    ids: list[int],
    spk: torch.Tensor,
    spk_mask: torch.Tensor,
    allowed_ids: torch.Tensor,
    stop_id: int,
    stop_name: str,
    sampling: SamplingConfig,
    max_len: int,
    generator: torch.Generator,
) -> tuple[list[int], str]:
    produced: list[int] = []
    model.eval()
    with torch.no_grad():
        while len(produced) < max_len:
            L = len(ids)
            if L >= model.config.max_seq_len:
                return produced, "max_length"
            t = torch.as_tensor(ids, dtype=torch.long)[None, :]
            logits = model(t, spk[:, :L], spk_mask[:, :L])[0, -1]
            token = sample_token(logits, produced, sampling, generator, allowed_ids)
            if token == stop_id:
                return produced, stop_name
            produced.append(token)
            ids.append(token)
    return produced, "max_length"


def caption_phase_ids(vocab: VocabSpec) -> torch.Tensor:
    return torch.cat(
        [
            torch.arange(vocab.bpe_vocab_size, dtype=torch.long),
            torch.tensor([vocab.caption_end], dtype=torch.long),
        ]
    )


def code_phase_ids(vocab: VocabSpec) -> torch.Tensor:
    return torch.cat(
        [
            torch.arange(vocab.code_base, vocab.total_size, dtype=torch.long),
            torch.tensor([vocab.codes_end], dtype=torch.long),
        ]
    )


def generate_caption(
    model: DialogueLM,
    seq: TokenSequence,
    sampling: SamplingConfig,
    max_len: int = 128,
    generator: torch.Generator | None = None,
) -> tuple[tuple[int, ...], str]:
    """Sample the target caption from a prompt ending at CAPTION_START."""
    vocab = model.vocab
    if seq.ids[-1] != vocab.caption_start:
        raise ValueError("prompt must end at the target CAPTION_START")
    if generator is None:
        generator = torch.Generator().manual_seed(sampling.seed)
    ids, spk, mask = _prompt_tensors(model, seq)
    produced, stop = _generate_phase(
        model,
        ids,
        spk,
        mask,
        caption_phase_ids(vocab),
        vocab.caption_end,
        "caption_end",
        sampling,
        max_len,
        generator,
    )
    return tuple(produced), stop


def generate_codes(
    model: DialogueLM,
    seq: TokenSequence,
    sampling: SamplingConfig,
    caption_ids: Sequence[int] | None = None,
    max_len: int = 256,
    generator: torch.Generator | None = None,
) -> tuple[SemanticCodes, str]:
    """Sample target codes. For captioned framings supply the caption ids."""
    vocab = model.vocab
    if seq.ids[-1] != vocab.caption_start:
        raise ValueError("prompt must end at the target CAPTION_START")
    if generator is None:
        generator = torch.Generator().manual_seed(sampling.seed)
    ids, spk, mask = _prompt_tensors(model, seq)
    if caption_ids is not None:
        for t in caption_ids:
            if not vocab.is_text(int(t)):
                raise ValueError(f"caption id {t} outside the BPE range")
        ids.extend(int(t) for t in caption_ids)
        ids.append(vocab.caption_end)
    produced, stop = _generate_phase(
        model,
        ids,
        spk,
        mask,
        code_phase_ids(vocab),
        vocab.codes_end,
        "codes_end",
        sampling,
        max_len,
        generator,
    )
    codes = SemanticCodes(codes=tuple(vocab.code_index(t) for t in produced))
    return codes, stop


def chain_generate(
    model: DialogueLM,
    seq: TokenSequence,
    sampling: SamplingConfig,
    max_caption_len: int = 128,
    max_code_len: int = 256,
) -> ChainOutput:
    """Caption phase then code phase from one inference prompt."""
    generator = torch.Generator().manual_seed(sampling.seed)
    if seq.layout.captions_included:
        caption_ids, cap_stop = generate_caption(
            model, seq, sampling, max_caption_len, generator
        )
    else:
        caption_ids, cap_stop = (), "skipped"
    codes, code_stop = generate_codes(
        model,
        seq,
        sampling,
        caption_ids=caption_ids if seq.layout.captions_included else None,
        max_len=max_code_len,
        generator=generator,
    )
    return ChainOutput(
        caption_ids=caption_ids, codes=codes, caption_stop=cap_stop, code_stop=code_stop
    )


def teacher_forcing_accuracy(
    model: DialogueLM, targets: Sequence[TrainingTarget], vocab: VocabSpec
) -> float:
    """Fraction of supervised positions predicted exactly under teacher forcing."""
    model.eval()
    correct = 0
    total = 0
    with torch.no_grad():
        batch = collate_targets(targets, vocab, dtype=model.token_embedding.weight.dtype)
        logits = model(batch["input_ids"], batch["speaker_vectors"], batch["speaker_mask"])
        pred = logits.argmax(dim=-1)
        mask = batch["caption_mask"] | batch["speech_mask"]
        correct += int((pred[mask] == batch["target_ids"][mask]).sum())
        total += int(mask.sum())
    if total == 0:
        raise ValueError("no supervised positions in the batch")
    return correct / total


def initial_logit_entropy(model: DialogueLM, ids: torch.Tensor) -> float:
    """Mean per-position entropy (nats) of the model's output distribution."""
    model.eval()
    with torch.no_grad():
        logits = model(ids)
        logp = F.log_softmax(logits, dim=-1)
        return float(-(logp.exp() * logp).sum(-1).mean())


def greedy_sampling(seed: int = 0) -> SamplingConfig:
    """top_k=1 degenerate sampling: deterministic argmax decoding."""
    return SamplingConfig(top_k=1, seed=seed)
