"""Optimal-transport conditional flow matching for mel-frame rendering.

The generative contract: draw X0 ~ N(0, I), move it along the straight-line
interpolant phi_t = (1 - (1 - sigma) t) X0 + t X1 whose exact time derivative
is the target field X1 - (1 - sigma) X0, and train a conditioned network to
regress that field. Sampling integrates the learned field with a fixed-step
Euler solver from t=0 to t=1.

Conditioning per frame: speaker vector, caption embedding, the frame's code
embedding (codes upsampled 25 -> 100 frames/s), a visible prompt-mel prefix,
and the prompt mask flag, fused by concatenation into a fixed-width vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .codec import MelConfig, MelSpectrogram, SemanticCodes, SpeakerVector
from .embedding import HashingTextEmbedder


@dataclass(frozen=True)
class CFMConfig:
    feature_dim: int = 80
    cond_width: int = 512
    sigma_min: float = 1e-4
    n_euler_steps: int = 10
    seed: int = 0
    code_vocab_size: int = 64
    code_embed_dim: int = 128
    caption_embed_dim: int = 256
    speaker_dim: int = 192
    hidden_dim: int = 256
    n_blocks: int = 2
    time_embed_dim: int = 32
    frames_per_code: int = 4
    loss_norm: str = "l2"  # "l2" (squared mean) or "l1"

    def __post_init__(self) -> None:
        if not 0.0 <= self.sigma_min < 1.0:
            raise ValueError(f"sigma_min must lie in [0, 1), got {self.sigma_min}")
        if self.n_euler_steps < 1:
            raise ValueError(f"n_euler_steps must be >= 1, got {self.n_euler_steps}")
        if self.loss_norm not in ("l2", "l1"):
            raise ValueError(f"loss_norm must be 'l2' or 'l1', got {self.loss_norm!r}")

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "cond_width": self.cond_width,
            "sigma_min": self.sigma_min,
            "n_euler_steps": self.n_euler_steps,
            "seed": self.seed,
            "code_vocab_size": self.code_vocab_size,
            "code_embed_dim": self.code_embed_dim,
            "caption_embed_dim": self.caption_embed_dim,
            "speaker_dim": self.speaker_dim,
            "hidden_dim": self.hidden_dim,
            "n_blocks": self.n_blocks,
            "time_embed_dim": self.time_embed_dim,
            "frames_per_code": self.frames_per_code,
            "loss_norm": self.loss_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CFMConfig":
        return cls(**d)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def ot_flow(x0: torch.Tensor, x1: torch.Tensor, t, sigma: float) -> torch.Tensor:
    """Interpolant phi_t = (1 - (1 - sigma) t) x0 + t x1, t scalar in [0, 1]."""
    _check_same_shape(x0, x1)
    t_val = float(t) if not torch.is_tensor(t) else t
    if torch.is_tensor(t_val):
        if bool((t_val < 0).any()) or bool((t_val > 1).any()):
            raise ValueError("t outside [0, 1]")
    elif not 0.0 <= t_val <= 1.0:
        raise ValueError(f"t outside [0, 1]: {t_val}")
    return (1.0 - (1.0 - sigma) * t_val) * x0 + t_val * x1


def target_field(x0: torch.Tensor, x1: torch.Tensor, sigma: float) -> torch.Tensor:
    """The interpolant's time derivative x1 - (1 - sigma) x0; t-independent."""
    _check_same_shape(x0, x1)
    return x1 - (1.0 - sigma) * x0


class SinusoidalTimeEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        if dim % 2 != 0:
            raise ValueError(f"time embedding dim must be even, got {dim}")
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        """t: scalar tensor or [N] -> [N?, dim]."""
        half = self.dim // 2
        freqs = torch.exp(
            torch.arange(half, dtype=t.dtype, device=t.device)
            * (-math.log(10000.0) / max(half - 1, 1))
        )
        ang = t.reshape(-1, 1) * freqs[None, :] * 1000.0
        emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
        return emb if t.ndim else emb[0]


class FieldNet(nn.Module):
    """Residual MLP vector field over per-row features with a time embedding."""

    def __init__(
        self,
        feature_dim: int,
        cond_dim: int = 0,
        hidden_dim: int = 256,
        n_blocks: int = 2,
        time_embed_dim: int = 32,
    ):
        super().__init__()
        self.feature_dim = feature_dim
        self.cond_dim = cond_dim
        self.time_embed = SinusoidalTimeEmbedding(time_embed_dim)
        self.time_proj = nn.Linear(time_embed_dim, hidden_dim)
        self.in_proj = nn.Linear(feature_dim + cond_dim, hidden_dim)
        self.blocks = nn.ModuleList(
            nn.Sequential(
                nn.LayerNorm(hidden_dim),
                nn.Linear(hidden_dim, hidden_dim),
                nn.GELU(),
                nn.Linear(hidden_dim, hidden_dim),
            )
            for _ in range(n_blocks)
        )
        self.out_norm = nn.LayerNorm(hidden_dim)
        self.out_proj = nn.Linear(hidden_dim, feature_dim)

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor | None = None
    ) -> torch.Tensor:
        """x: [N, feature_dim]; t: scalar or [N]; cond: [N, cond_dim] or None."""
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ValueError(f"x must be [N, {self.feature_dim}], got {tuple(x.shape)}")
        if self.cond_dim:
            if cond is None:
                raise ValueError("conditioning expected but not given")
            h_in = torch.cat([x, cond.to(x.dtype)], dim=-1)
        else:
            h_in = x
        t = torch.as_tensor(t, dtype=x.dtype, device=x.device)
        temb = self.time_proj(self.time_embed(t))
        if temb.ndim == 1:
            temb = temb[None, :]
        h = self.in_proj(h_in) + temb
        for block in self.blocks:
            h = h + block(h)
        return self.out_proj(self.out_norm(h))


@dataclass
class ConditioningBundle:
    """Per-frame conditioning tensors for one utterance of T mel frames."""

    speaker: torch.Tensor  # [speaker_dim]
    caption_embedding: torch.Tensor  # [caption_embed_dim]
    frame_codes: torch.Tensor  # [T] long, codes upsampled to the mel rate
    prompt_mel: torch.Tensor  # [T, feature_dim], zeros where masked
    prompt_mask: torch.Tensor  # [T] bool, True = hidden (to be generated)

    def __post_init__(self) -> None:
        T = self.frame_codes.shape[0]
        if self.prompt_mel.shape[0] != T or self.prompt_mask.shape[0] != T:
            raise ValueError("conditioning tensors disagree on frame count")
        if bool((self.prompt_mel[self.prompt_mask] != 0).any()):
            raise ValueError("masked prompt frames must be zeroed")

    @property
    def n_frames(self) -> int:
        return int(self.frame_codes.shape[0])


def build_conditioning(
    codes: SemanticCodes | Sequence[int],
    caption_embedding: np.ndarray | torch.Tensor,
    speaker: SpeakerVector | np.ndarray,
    cfg: CFMConfig,
    prompt_frames: np.ndarray | torch.Tensor | None = None,
    visible_prefix: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> ConditioningBundle:
    """Upsample codes to the mel frame rate and assemble the bundle.

    prompt_frames, when given, must already be at the mel frame rate; only the
    first ``visible_prefix`` frames stay visible (default: all of them, capped
    at the total length), everything else is masked.
    """
    raw = codes.codes if isinstance(codes, SemanticCodes) else tuple(codes)
    if len(raw) == 0:
        raise ValueError("codes are empty")
    if any(not 0 <= c < cfg.code_vocab_size for c in raw):
        raise ValueError(f"code index outside [0, {cfg.code_vocab_size})")
    frame_codes = torch.as_tensor(raw, dtype=torch.long).repeat_interleave(
        cfg.frames_per_code
    )
    T = frame_codes.shape[0]

    spk = speaker.embedding if isinstance(speaker, SpeakerVector) else speaker
    spk_t = torch.as_tensor(np.asarray(spk), dtype=dtype)
    if spk_t.shape != (cfg.speaker_dim,):
        raise ValueError(f"speaker vector must be [{cfg.speaker_dim}]")
    cap_t = torch.as_tensor(np.asarray(caption_embedding), dtype=dtype)
    if cap_t.shape != (cfg.caption_embed_dim,):
        raise ValueError(
            f"caption embedding must be [{cfg.caption_embed_dim}], got {tuple(cap_t.shape)}"
        )

    prompt = torch.zeros(T, cfg.feature_dim, dtype=dtype)
    mask = torch.ones(T, dtype=torch.bool)
    if prompt_frames is not None:
        pf = torch.as_tensor(np.asarray(prompt_frames), dtype=dtype)
        if pf.ndim != 2 or pf.shape[1] != cfg.feature_dim:
            raise ValueError(f"prompt frames must be [P, {cfg.feature_dim}]")
        visible = pf.shape[0] if visible_prefix is None else visible_prefix
        visible = max(0, min(visible, pf.shape[0], T))
        if visible:
            prompt[:visible] = pf[:visible]
            mask[:visible] = False
    return ConditioningBundle(
        speaker=spk_t,
        caption_embedding=cap_t,
        frame_codes=frame_codes,
        prompt_mel=prompt,
        prompt_mask=mask,
    )


class MelFieldModel(nn.Module):
    """FieldNet wrapped with the conditioning fusion for mel rendering."""

    def __init__(self, cfg: CFMConfig):
        super().__init__()
        self.cfg = cfg
        self.code_embedding = nn.Embedding(cfg.code_vocab_size, cfg.code_embed_dim)
        fused = (
            cfg.code_embed_dim
            + cfg.caption_embed_dim
            + cfg.speaker_dim
            + cfg.feature_dim
            + 1  # prompt mask flag
        )
        self.cond_proj = nn.Linear(fused, cfg.cond_width)
        self.field = FieldNet(
            feature_dim=cfg.feature_dim,
            cond_dim=cfg.cond_width,
            hidden_dim=cfg.hidden_dim,
            n_blocks=cfg.n_blocks,
            time_embed_dim=cfg.time_embed_dim,
        )

    def conditioning(self, bundle: ConditioningBundle) -> torch.Tensor:
        T = bundle.n_frames
        dtype = self.cond_proj.weight.dtype
        code_emb = self.code_embedding(bundle.frame_codes)
        fused = torch.cat(
            [
                code_emb.to(dtype),
                bundle.caption_embedding.to(dtype)[None, :].expand(T, -1),
                bundle.speaker.to(dtype)[None, :].expand(T, -1),
                bundle.prompt_mel.to(dtype),
                bundle.prompt_mask.to(dtype)[:, None],
            ],
            dim=-1,
        )
        return self.cond_proj(fused)

    def forward(self, x: torch.Tensor, t, bundle: ConditioningBundle) -> torch.Tensor:
        if x.shape[0] != bundle.n_frames:
            raise ValueError(
                f"state has {x.shape[0]} frames but conditioning has {bundle.n_frames}"
            )
        return self.field(x, torch.as_tensor(t, dtype=x.dtype), self.conditioning(bundle))


FieldFn = Callable[[torch.Tensor, float], torch.Tensor]


def cfm_loss_at(
    field_fn: FieldFn,
    x1: torch.Tensor,
    x0: torch.Tensor,
    t: float | torch.Tensor,
    sigma: float,
    loss_norm: str = "l2",
) -> torch.Tensor:
    """Deterministic flow-matching regression loss for given (x0, t)."""
    phi = ot_flow(x0, x1, t, sigma)
    omega = target_field(x0, x1, sigma)
    pred = field_fn(phi, t)
    _check_same_shape(pred, omega)
    diff = pred - omega
    return (diff**2).mean() if loss_norm == "l2" else diff.abs().mean()


def cfm_loss(
    model,
    batch: Sequence[tuple[torch.Tensor, ConditioningBundle | None]],
    generator: torch.Generator,
    sigma: float,
    loss_norm: str = "l2",
) -> torch.Tensor:
    """Mean flow-matching loss over a batch; t ~ U[0,1], X0 ~ N(0,I) per item."""
    if not batch:
        raise ValueError("empty batch")
    losses = []
    for x1, bundle in batch:
        t = torch.rand((), dtype=x1.dtype, generator=generator)
        x0 = torch.randn(x1.shape, dtype=x1.dtype, generator=generator)
        if bundle is None:
            fn: FieldFn = lambda x, tt: model(x, tt)  # noqa: E731
        else:
            fn = lambda x, tt, b=bundle: model(x, tt, b)  # noqa: E731
        losses.append(cfm_loss_at(fn, x1, x0, t, sigma, loss_norm))
    loss = torch.stack(losses).mean()
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite flow-matching loss: {float(loss)!r}")
    return loss


def euler_solve(
    field_fn: FieldFn,
    shape: tuple[int, ...],
    n_steps: int,
    generator: torch.Generator | None = None,
    x0: torch.Tensor | None = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Integrate dX/dt = field(X, t) from t=0 to 1 with fixed Euler steps."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if x0 is None:
        if generator is None:
            raise ValueError("need a generator when x0 is not supplied")
        x = torch.randn(shape, dtype=dtype, generator=generator)
    else:
        x = x0.clone()
    dt = 1.0 / n_steps
    for k in range(n_steps):
        t = k * dt
        x = x + dt * field_fn(x, t)
        if not torch.isfinite(x).all():
            raise RuntimeError(f"non-finite state at Euler step {k + 1} of {n_steps}")
    return x


_default_embedder: HashingTextEmbedder | None = None


def embed_caption(caption: str, dim: int = 256) -> np.ndarray:
    """Default deterministic caption embedding (pluggable; see HashingTextEmbedder)."""
    global _default_embedder
    if _default_embedder is None or _default_embedder.dim != dim:
        _default_embedder = HashingTextEmbedder(dim=dim)
    return _default_embedder(caption)


def synthesize(
    model: MelFieldModel,
    codes: SemanticCodes | Sequence[int],
    caption: str | np.ndarray,
    speaker: SpeakerVector | np.ndarray,
    mel_config: MelConfig | None = None,
    prompt_mel: MelSpectrogram | None = None,
    n_steps: int | None = None,
    seed: int = 0,
    embedder: Callable[[str], np.ndarray] | None = None,
) -> MelSpectrogram:
    """Render a mel spectrogram for the given codes and conditioning.

    Output frame count is frames_per_code * len(codes). When a prompt mel is
    given, its first half-of-target-length frames stay visible and the
    continuation region is masked for generation.
    """
    cfg = model.cfg
    mel_config = mel_config or MelConfig()
    raw = codes.codes if isinstance(codes, SemanticCodes) else tuple(codes)
    if len(raw) == 0:
        raise ValueError("codes are empty")
    T = cfg.frames_per_code * len(raw)

    if isinstance(caption, str):
        embed = embedder or (lambda text: embed_caption(text, cfg.caption_embed_dim))
        cap_vec = embed(caption)
    else:
        cap_vec = caption

    prompt_frames = None
    visible = None
    if prompt_mel is not None:
        prompt_frames = prompt_mel.frames
        visible = min(prompt_mel.n_frames, T // 2)

    dtype = model.cond_proj.weight.dtype
    bundle = build_conditioning(
        raw, cap_vec, speaker, cfg, prompt_frames, visible, dtype=dtype
    )
    generator = torch.Generator().manual_seed(seed)
    model.eval()
    with torch.no_grad():
        frames = euler_solve(
            lambda x, t: model(x, t, bundle),
            (T, cfg.feature_dim),
            n_steps or cfg.n_euler_steps,
            generator=generator,
            dtype=dtype,
        )
    # visible prompt frames are known; keep them verbatim in the output
    if prompt_frames is not None and visible:
        frames = frames.clone()
        frames[:visible] = bundle.prompt_mel[:visible]
    return MelSpectrogram(
        frames=frames.detach().cpu().numpy().astype(np.float64),
        frame_rate=mel_config.frame_rate,
        sample_rate=mel_config.sample_rate,
        n_samples=T * mel_config.hop,
    )


def mel_to_waveform(
    mel: MelSpectrogram,
    config: MelConfig | None = None,
    n_iters: int = 32,
    seed: int = 0,
) -> np.ndarray:
    """Best-effort waveform via pseudo-inverse mel + Griffin-Lim phase recovery.

    Demo plumbing only; fidelity is out of scope.
    """
    from .codec import mel_filterbank  # local import to keep module load light

    config = config or MelConfig(sample_rate=mel.sample_rate)
    fb = mel_filterbank(config)
    mel_power = np.exp(mel.frames)
    power = np.clip(mel_power @ np.linalg.pinv(fb).T, 0.0, None)
    mag = np.sqrt(power)

    rng = np.random.default_rng(seed)
    n_samples = mel.n_samples
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    spec = mag * phase
    window = np.hanning(config.win_length)
    if config.win_length < config.n_fft:
        lpad = (config.n_fft - config.win_length) // 2
        window = np.pad(window, (lpad, config.n_fft - config.win_length - lpad))
    hop = config.hop
    pad = config.n_fft // 2

    def istft(s: np.ndarray) -> np.ndarray:
        frames = np.fft.irfft(s, n=config.n_fft, axis=1)
        out = np.zeros(pad * 2 + n_samples + config.n_fft)
        norm = np.zeros_like(out)
        for i in range(frames.shape[0]):
            start = i * hop
            out[start : start + config.n_fft] += frames[i] * window
            norm[start : start + config.n_fft] += window**2
        out = out / np.maximum(norm, 1e-8)
        return out[pad : pad + n_samples]

    def stft_complex(x: np.ndarray) -> np.ndarray:
        xp = np.pad(x, pad, mode="reflect" if x.size > pad else "edge")
        n_frames = 1 + (len(xp) - config.n_fft) // hop
        n_frames = min(n_frames, mag.shape[0])
        idx = np.arange(config.n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
        return np.fft.rfft(xp[idx] * window[None, :], n=config.n_fft, axis=1)

    x = istft(spec)
    for _ in range(n_iters):
        s = stft_complex(x)
        s = np.pad(s, ((0, mag.shape[0] - s.shape[0]), (0, 0)))
        phase = np.where(np.abs(s) > 1e-12, s / np.maximum(np.abs(s), 1e-12), phase[: s.shape[0]])
        x = istft(mag * phase)
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x = x / peak
    return x
