"""Two-stage dialogue-LM training and flow-matching training.

Determinism contract: every training step derives its own seed from
(run seed, step index), and batches are drawn from that per-step stream.
Stopping after step k and resuming from a checkpoint therefore replays the
exact same remaining steps, bit for bit, with no RNG state in the checkpoint.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .audio import read_wav
from .bpe import ByteBPE
from .codec import (
    MelConfig,
    VQCodebook,
    compute_mel,
    encode_semantic,
    load_codebook,
    save_codebook,
    speaker_embedding,
    train_codebook,
)
from .corpus import DialogueSession
from .flow import CFMConfig, MelFieldModel, build_conditioning, cfm_loss, embed_caption
from .lm import DialogueLM, LMConfig, SamplingConfig, collate_targets, train_step
from .tokenizer import (
    TrainingTarget,
    TurnTokens,
    VocabSpec,
    build_sequence,
    build_training_target,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    bpe_vocab_size: int = 300
    code_vocab_size: int = 24
    n_window: int = 3
    batch_size: int = 4
    learning_rate: float = 3e-4
    warmup_steps: int = 10
    max_steps: int = 120
    caption_loss_weight: float = 1.0
    use_captions: bool = True
    use_context: bool = True
    grad_clip: float = 1.0
    checkpoint_every: int = 50
    n_layers: int = 2
    model_dim: int = 128
    n_heads: int = 4
    max_seq_len: int = 512
    dropout_rate: float = 0.0
    cfm_hidden_dim: int = 128
    cfm_blocks: int = 2
    cfm_cond_width: int = 128
    n_euler_steps: int = 10
    sigma_min: float = 1e-4
    loss_norm: str = "l2"
    top_k: int = 25
    win_size: int = 10
    tau_r: float = 0.1
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.n_window < 1:
            raise ValueError(f"n_window must be >= 1, got {self.n_window}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.caption_loss_weight < 0:
            raise ValueError("caption_loss_weight must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def merged(self, **overrides) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(self)}
        updates = {}
        for key, value in overrides.items():
            if key not in known:
                raise ValueError(f"unknown config field {key!r}")
            if value is not None:
                updates[key] = value
        return dataclasses.replace(self, **updates)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
        return cls().merged(**data)

    def lm_config(self) -> LMConfig:
        return LMConfig(
            n_layers=self.n_layers,
            model_dim=self.model_dim,
            n_heads=self.n_heads,
            max_seq_len=self.max_seq_len,
            dropout_rate=self.dropout_rate,
        )

    def sampling_config(self, seed: int | None = None) -> "SamplingConfig":
        return SamplingConfig(
            top_k=self.top_k,
            win_size=self.win_size,
            tau_r=self.tau_r,
            temperature=self.temperature,
            seed=self.seed if seed is None else seed,
        )

    def cfm_config(self, mel_config: MelConfig) -> CFMConfig:
        return CFMConfig(
            feature_dim=mel_config.n_mels,
            cond_width=self.cfm_cond_width,
            sigma_min=self.sigma_min,
            n_euler_steps=self.n_euler_steps,
            seed=self.seed,
            code_vocab_size=self.code_vocab_size,
            hidden_dim=self.cfm_hidden_dim,
            n_blocks=self.cfm_blocks,
            frames_per_code=mel_config.frames_per_code,
            loss_norm=self.loss_norm,
        )


def step_seed(seed: int, step: int) -> int:
    """Per-step seed derived by hashing; stable across resume boundaries."""
    digest = hashlib.sha256(f"{seed}:{step}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def lr_at(step: int, cfg: RunConfig) -> float:
    """Linear warmup to the base rate, constant afterwards."""
    if cfg.warmup_steps <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * min(1.0, (step + 1) / cfg.warmup_steps)


# ---------------------------------------------------------------------------
# preprocessors and the prepared corpus


@dataclass(frozen=True)
class Preprocessors:
    bpe: ByteBPE
    codebook: VQCodebook
    vocab: VocabSpec

    @property
    def mel_config(self) -> MelConfig:
        return self.codebook.mel_config


def fit_preprocessors(
    sessions: list[DialogueSession],
    cfg: RunConfig,
    mel_config: MelConfig | None = None,
) -> Preprocessors:
    """Train the text BPE and the semantic-code codebook on one split."""
    texts: list[str] = []
    mels = []
    mel_config = mel_config or MelConfig()
    for session in sessions:
        for turn in session.turns:
            texts.append(turn.text)
            if turn.caption:
                texts.append(turn.caption)
            if turn.audio_path is not None:
                waveform, sr = read_wav(turn.audio_path)
                if sr != mel_config.sample_rate:
                    raise ValueError(
                        f"{turn.audio_path} has sample rate {sr}, expected "
                        f"{mel_config.sample_rate}"
                    )
                mels.append(compute_mel(waveform, mel_config))
    if not mels:
        raise ValueError("no audio in the given sessions; cannot fit a codebook")
    bpe = ByteBPE.train(texts, cfg.bpe_vocab_size)
    codebook = train_codebook(mels, K=cfg.code_vocab_size, seed=cfg.seed, config=mel_config)
    vocab = VocabSpec(bpe_vocab_size=bpe.vocab_size, code_vocab_size=cfg.code_vocab_size)
    return Preprocessors(bpe=bpe, codebook=codebook, vocab=vocab)


def save_preprocessors(pre: Preprocessors, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pre.bpe.save(out_dir / "bpe.json")
    save_codebook(pre.codebook, out_dir / "codebook.f32")
    (out_dir / "vocab.json").write_text(
        json.dumps(pre.vocab.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
    )


def load_preprocessors(out_dir: str | Path) -> Preprocessors:
    out_dir = Path(out_dir)
    bpe = ByteBPE.load(out_dir / "bpe.json")
    codebook = load_codebook(out_dir / "codebook.f32")
    vocab = VocabSpec.from_dict(
        json.loads((out_dir / "vocab.json").read_text(encoding="utf-8"))
    )
    if vocab.bpe_vocab_size != bpe.vocab_size:
        raise ValueError("saved vocab disagrees with the saved BPE model")
    return Preprocessors(bpe=bpe, codebook=codebook, vocab=vocab)


@dataclass(frozen=True)
class PreparedTurn:
    tokens: TurnTokens
    mel_frames: np.ndarray  # [T, n_mels] at the full mel rate
    caption: str | None
    role: str


@dataclass(frozen=True)
class PreparedCorpus:
    sessions: tuple[DialogueSession, ...]
    turns: dict[tuple[str, int], PreparedTurn]

    def keys_for_stage(self, stage: int) -> list[tuple[str, int]]:
        if stage == 1:
            return sorted(self.turns)
        if stage == 2:
            return sorted(k for k, v in self.turns.items() if v.role == "agent")
        raise ValueError(f"stage must be 1 or 2, got {stage}")


def prepare_corpus(sessions: list[DialogueSession], pre: Preprocessors) -> PreparedCorpus:
    """Tokenize every audible turn once; audio-less turns are skipped."""
    turns: dict[tuple[str, int], PreparedTurn] = {}
    for session in sessions:
        for ti, turn in enumerate(session.turns):
            if turn.audio_path is None:
                log.warning(
                    "session %s turn %d has no audio; excluded from training",
                    session.session_id,
                    ti,
                )
                continue
            waveform, sr = read_wav(turn.audio_path)
            mel = compute_mel(waveform, pre.mel_config)
            codes = encode_semantic(mel, pre.codebook)
            tokens = TurnTokens(
                speaker_vector=speaker_embedding(waveform, sr, pre.mel_config).embedding,
                text_ids=tuple(pre.bpe.encode(turn.text)),
                codes=codes.codes,
                caption_ids=tuple(pre.bpe.encode(turn.caption)) if turn.caption else None,
            )
            turns[(session.session_id, ti)] = PreparedTurn(
                tokens=tokens,
                mel_frames=mel.frames,
                caption=turn.caption,
                role=turn.role,
            )
    if not turns:
        raise ValueError("prepared corpus is empty")
    return PreparedCorpus(sessions=tuple(sessions), turns=turns)


# ---------------------------------------------------------------------------
# sequence assembly for the two stages


def stage1_target(
    prepared: PreparedCorpus,
    key: tuple[str, int],
    pre: Preprocessors,
    use_captions: bool = True,
) -> TrainingTarget:
    """Single-utterance example with empty history."""
    tok = prepared.turns[key].tokens
    captioned = use_captions and tok.caption_ids is not None
    seq = build_sequence(
        [],
        tok,
        pre.vocab,
        target_caption_ids=tok.caption_ids if captioned else None,
        target_codes=tok.codes,
        include_captions=captioned,
    )
    return build_training_target(seq, pre.vocab)


def _history_tokens(
    prepared: PreparedCorpus,
    key: tuple[str, int],
    n_turns: int,
    captioned: bool,
) -> list[TurnTokens]:
    """Longest usable suffix of the preceding window ending at the target."""
    sid, ti = key
    history: list[TurnTokens] = []
    for j in range(max(0, ti - (n_turns - 1)), ti):
        turn = prepared.turns.get((sid, j))
        usable = (
            turn is not None
            and turn.tokens.codes is not None
            and (not captioned or turn.tokens.caption_ids is not None)
        )
        if usable:
            history.append(turn.tokens)
        else:
            history = []
    return history


def stage2_target(
    prepared: PreparedCorpus,
    key: tuple[str, int],
    n_turns: int,
    pre: Preprocessors,
    use_captions: bool = True,
) -> TrainingTarget:
    """Windowed dialogue example: up to n_turns-1 history turns plus the target."""
    if n_turns < 1:
        raise ValueError(f"n_turns must be >= 1, got {n_turns}")
    tok = prepared.turns[key].tokens
    captioned = use_captions and tok.caption_ids is not None
    history = _history_tokens(prepared, key, n_turns, captioned)
    seq = build_sequence(
        history,
        tok,
        pre.vocab,
        target_caption_ids=tok.caption_ids if captioned else None,
        target_codes=tok.codes,
        include_captions=captioned,
    )
    return build_training_target(seq, pre.vocab)


def inference_prompt(
    prepared: PreparedCorpus,
    key: tuple[str, int],
    n_turns: int,
    pre: Preprocessors,
    use_captions: bool = True,
):
    """Prompt framing for the same example: ends at the target CAPTION_START."""
    tok = prepared.turns[key].tokens
    history = _history_tokens(prepared, key, n_turns, use_captions)
    return build_sequence(history, tok, pre.vocab, include_captions=use_captions)


# ---------------------------------------------------------------------------
# experiment log and checkpoints


class ExperimentLog:
    """Append-only JSONL event log."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, event: str, **fields) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"event": event, **fields}, sort_keys=True))
            fh.write("\n")


def _write_checkpoint(path: Path, blob: dict, sidecar: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2), encoding="utf-8"
    )


def save_lm_checkpoint(
    path: str | Path,
    model: DialogueLM,
    optimizer: torch.optim.Optimizer,
    step: int,
    stage: int,
    cfg: RunConfig,
    vocab: VocabSpec,
) -> Path:
    path = Path(path)
    blob = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "step": step,
    }
    sidecar = {
        "kind": "dialogue_lm",
        "stage": stage,
        "step": step,
        "run_config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "lm_config": model.config.to_dict(),
        "vocab": vocab.to_dict(),
        "vocab_hash": vocab.spec_hash(),
    }
    _write_checkpoint(path, blob, sidecar)
    return path


def load_lm_checkpoint(path: str | Path) -> tuple[DialogueLM, dict, dict]:
    """Returns (model, sidecar metadata, raw blob with optimizer state)."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    if meta.get("kind") != "dialogue_lm":
        raise ValueError(f"{path} is not a dialogue LM checkpoint")
    blob = torch.load(path, weights_only=True)
    vocab = VocabSpec.from_dict(meta["vocab"])
    model = DialogueLM(LMConfig.from_dict(meta["lm_config"]), vocab)
    model.load_state_dict(blob["model"])
    return model, meta, blob


def save_cfm_checkpoint(
    path: str | Path,
    model: MelFieldModel,
    optimizer: torch.optim.Optimizer,
    step: int,
    cfg: RunConfig,
    mel_config: MelConfig,
    vocab_hash: str,
) -> Path:
    path = Path(path)
    blob = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "step": step,
    }
    sidecar = {
        "kind": "mel_cfm",
        "step": step,
        "run_config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "cfm_config": model.cfg.to_dict(),
        "mel_config": mel_config.to_dict(),
        "vocab_hash": vocab_hash,
    }
    _write_checkpoint(path, blob, sidecar)
    return path


def load_cfm_checkpoint(path: str | Path) -> tuple[MelFieldModel, dict, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    if meta.get("kind") != "mel_cfm":
        raise ValueError(f"{path} is not a flow-matching checkpoint")
    blob = torch.load(path, weights_only=True)
    model = MelFieldModel(CFMConfig.from_dict(meta["cfm_config"]))
    model.load_state_dict(blob["model"])
    return model, meta, blob


# ---------------------------------------------------------------------------
# LM training


StopCondition = Callable[[int, DialogueLM], bool]


def _pick_batch(rng: np.random.Generator, n_examples: int, batch_size: int) -> np.ndarray:
    size = min(batch_size, n_examples)
    return rng.choice(n_examples, size=size, replace=False)


def train_lm(
    prepared: PreparedCorpus,
    pre: Preprocessors,
    cfg: RunConfig,
    stage: int,
    out_dir: str | Path,
    init_from: str | Path | None = None,
    resume_from: str | Path | None = None,
    stop_condition: StopCondition | None = None,
    exp_log: ExperimentLog | None = None,
) -> Path:
    """Train the dialogue LM for one stage; returns the final checkpoint path.

    init_from warm-starts the weights only (stage-1 -> stage-2 transfer);
    resume_from restores weights, optimizer, and the step counter.
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    if init_from is not None and resume_from is not None:
        raise ValueError("pass either init_from or resume_from, not both")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    model = DialogueLM(cfg.lm_config(), pre.vocab)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, weight_decay=0.0
    )
    start_step = 0
    if init_from is not None:
        loaded, meta, _ = load_lm_checkpoint(init_from)
        if meta["vocab_hash"] != pre.vocab.spec_hash():
            raise ValueError(
                "init checkpoint was trained with a different vocabulary "
                f"({meta['vocab_hash']} vs {pre.vocab.spec_hash()})"
            )
        model.load_state_dict(loaded.state_dict())
        log.info("stage %d initialized from %s (step %d)", stage, init_from, meta["step"])
    elif resume_from is not None:
        loaded, meta, blob = load_lm_checkpoint(resume_from)
        if meta["vocab_hash"] != pre.vocab.spec_hash():
            raise ValueError("resume checkpoint vocabulary mismatch")
        if meta["stage"] != stage:
            raise ValueError(
                f"resume checkpoint is stage {meta['stage']}, requested stage {stage}"
            )
        model.load_state_dict(loaded.state_dict())
        optimizer.load_state_dict(blob["optimizer"])
        start_step = int(meta["step"])
        log.info("resumed stage %d at step %d from %s", stage, start_step, resume_from)
    elif stage == 2:
        log.info('stage 2 starting from random weights (variant "w/o First-Stage")')

    examples = prepared.keys_for_stage(stage)
    if not examples:
        raise ValueError(f"no usable examples for stage {stage}")

    log_path = out_dir / f"lm_stage{stage}_train_log.csv"
    mode = "a" if resume_from is not None and log_path.exists() else "w"
    dtype = model.token_embedding.weight.dtype
    final_path = out_dir / f"lm_stage{stage}_final.pt"

    with open(log_path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["step", "loss_caption", "loss_speech", "lr"])
        step = start_step
        for step in range(start_step, cfg.max_steps):
            s = step_seed(cfg.seed, step)
            torch.manual_seed(s)
            rng = np.random.default_rng(s)
            idx = _pick_batch(rng, len(examples), cfg.batch_size)
            targets = []
            for i in idx:
                key = examples[int(i)]
                if stage == 1:
                    targets.append(stage1_target(prepared, key, pre, cfg.use_captions))
                else:
                    n_turns = (
                        int(rng.integers(1, cfg.n_window + 1)) if cfg.use_context else 1
                    )
                    targets.append(
                        stage2_target(prepared, key, n_turns, pre, cfg.use_captions)
                    )
            lr = lr_at(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            batch = collate_targets(targets, pre.vocab, dtype=dtype)
            l_cap, l_sp = train_step(
                model, batch, optimizer, cfg.caption_loss_weight, cfg.grad_clip
            )
            writer.writerow([step, f"{l_cap:.6f}", f"{l_sp:.6f}", f"{lr:.8f}"])
            if exp_log is not None:
                exp_log.log(
                    "lm_step", stage=stage, step=step, loss_caption=l_cap, loss_speech=l_sp
                )
            done = step + 1
            if done % cfg.checkpoint_every == 0 and done < cfg.max_steps:
                save_lm_checkpoint(
                    out_dir / f"lm_stage{stage}_step{done:06d}.pt",
                    model, optimizer, done, stage, cfg, pre.vocab,
                )
            if stop_condition is not None and stop_condition(step, model):
                log.info("stop condition met at step %d", step)
                break

    save_lm_checkpoint(final_path, model, optimizer, step + 1, stage, cfg, pre.vocab)
    return final_path


# ---------------------------------------------------------------------------
# CFM training


def frames_for_codes(mel_frames: np.ndarray, n_codes: int, frames_per_code: int) -> np.ndarray:
    """Trim or edge-pad full-rate mel frames to exactly n_codes * frames_per_code."""
    T = n_codes * frames_per_code
    if mel_frames.shape[0] >= T:
        return mel_frames[:T]
    pad = np.repeat(mel_frames[-1:], T - mel_frames.shape[0], axis=0)
    return np.concatenate([mel_frames, pad], axis=0)


def _cfm_keys(prepared: PreparedCorpus) -> list[tuple[str, int]]:
    return sorted(
        k
        for k, v in prepared.turns.items()
        if v.role == "agent" and v.tokens.codes is not None
    )


def train_cfm(
    prepared: PreparedCorpus,
    pre: Preprocessors,
    cfg: RunConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    stop_condition: Callable[[int, MelFieldModel], bool] | None = None,
    exp_log: ExperimentLog | None = None,
) -> Path:
    """Train the mel renderer on agent turns; returns the final checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfm_cfg = cfg.cfm_config(pre.mel_config)

    torch.manual_seed(cfg.seed)
    model = MelFieldModel(cfm_cfg)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, weight_decay=0.0
    )
    start_step = 0
    if resume_from is not None:
        loaded, meta, blob = load_cfm_checkpoint(resume_from)
        if meta["vocab_hash"] != pre.vocab.spec_hash():
            raise ValueError("resume checkpoint vocabulary mismatch")
        model.load_state_dict(loaded.state_dict())
        optimizer.load_state_dict(blob["optimizer"])
        start_step = int(meta["step"])

    keys = _cfm_keys(prepared)
    if not keys:
        raise ValueError("no agent turns with codes; nothing to train the renderer on")

    log_path = out_dir / "cfm_train_log.csv"
    mode = "a" if resume_from is not None and log_path.exists() else "w"
    final_path = out_dir / "cfm_final.pt"

    with open(log_path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["step", "loss", "lr"])
        step = start_step
        for step in range(start_step, cfg.max_steps):
            s = step_seed(cfg.seed, step)
            torch.manual_seed(s)
            generator = torch.Generator().manual_seed(s)
            rng = np.random.default_rng(s)
            idx = _pick_batch(rng, len(keys), cfg.batch_size)
            batch = []
            for i in idx:
                turn = prepared.turns[keys[int(i)]]
                codes = turn.tokens.codes
                x1_np = frames_for_codes(
                    turn.mel_frames, len(codes), cfm_cfg.frames_per_code
                )
                T = x1_np.shape[0]
                visible = int(rng.integers(0, T // 2 + 1))
                bundle = build_conditioning(
                    codes,
                    embed_caption(turn.caption or "", cfm_cfg.caption_embed_dim),
                    turn.tokens.speaker_vector,
                    cfm_cfg,
                    prompt_frames=x1_np,
                    visible_prefix=visible,
                )
                batch.append((torch.as_tensor(x1_np, dtype=torch.float32), bundle))
            lr = lr_at(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            loss = cfm_loss(model, batch, generator, cfm_cfg.sigma_min, cfm_cfg.loss_norm)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            loss_val = float(loss.detach())
            writer.writerow([step, f"{loss_val:.6f}", f"{lr:.8f}"])
            if exp_log is not None:
                exp_log.log("cfm_step", step=step, loss=loss_val)
            done = step + 1
            if done % cfg.checkpoint_every == 0 and done < cfg.max_steps:
                save_cfm_checkpoint(
                    out_dir / f"cfm_step{done:06d}.pt",
                    model, optimizer, done, cfg, pre.mel_config, pre.vocab.spec_hash(),
                )
            if stop_condition is not None and stop_condition(step, model):
                log.info("stop condition met at step %d", step)
                break

    save_cfm_checkpoint(
        final_path, model, optimizer, step + 1, cfg, pre.mel_config, pre.vocab.spec_hash()
    )
    return final_path
