"""Acoustic front-end: log-mel features, k-means code books, speaker vectors.

The discrete 25 Hz semantic codes and the 192-d speaker vector are desk-scale
stand-ins for a supervised speech tokenizer and a pretrained voice-print
model; both sit behind small interfaces so stronger encoders can be swapped
in without touching the rest of the pipeline.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SPEAKER_DIM = 192
_SPEAKER_PROJECTION_SEED = 931248


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 22050
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int | None = None  # default: sample_rate // 100 (~10 ms)
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None  # default: Nyquist
    log_floor: float = 1e-10
    code_frame_rate: int = 25

    def __post_init__(self) -> None:
        if self.sample_rate < 8000:
            raise ValueError(f"sample_rate must be >= 8000, got {self.sample_rate}")
        if self.n_mels < 1 or self.n_fft < 16:
            raise ValueError("bad mel geometry")
        if self.win_length > self.n_fft:
            raise ValueError("win_length cannot exceed n_fft")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def hop(self) -> int:
        return self.hop_length if self.hop_length is not None else self.sample_rate // 100

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @property
    def frames_per_code(self) -> int:
        return max(1, round(self.frame_rate / self.code_frame_rate))

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "n_fft": self.n_fft,
            "win_length": self.win_length,
            "hop_length": self.hop,
            "n_mels": self.n_mels,
            "fmin": self.fmin,
            "fmax": self.fmax,
            "log_floor": self.log_floor,
            "code_frame_rate": self.code_frame_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MelConfig":
        return cls(**d)


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # [T, n_mels] log power
    frame_rate: float
    sample_rate: int
    n_samples: int

    def __post_init__(self) -> None:
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"mel frames must be [T>=1, n_mels], got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("mel frames contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class SemanticCodes:
    codes: tuple[int, ...]
    frame_rate: float = 25.0

    def __len__(self) -> int:
        return len(self.codes)


@dataclass(frozen=True)
class SpeakerVector:
    embedding: np.ndarray  # [SPEAKER_DIM], unit norm

    def __post_init__(self) -> None:
        if self.embedding.shape != (SPEAKER_DIM,):
            raise ValueError(f"speaker embedding must be [{SPEAKER_DIM}], got {self.embedding.shape}")
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"speaker embedding norm {norm} is not 1")

    def cosine(self, other: "SpeakerVector") -> float:
        return float(np.dot(self.embedding, other.embedding))


@dataclass(frozen=True)
class VQCodebook:
    centroids: np.ndarray  # [K, d] float32
    seed: int = 0
    mel_config: MelConfig = field(default_factory=MelConfig)
    objective_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError(f"centroids must be [K>=1, d], got {self.centroids.shape}")
        c = self.centroids.astype(np.float64)
        for i in range(len(c)):
            d2 = np.sum((c[i + 1 :] - c[i]) ** 2, axis=1)
            if d2.size and np.min(d2) < 1e-18:
                j = i + 1 + int(np.argmin(d2))
                raise ValueError(f"centroids {i} and {j} coincide (within 1e-9)")

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def _mel_filterbank_cached(n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float):
    centers = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = centers[m], centers[m + 1], centers[m + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - freqs) / max(hi - mid, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb, centers[1:-1]


def mel_filterbank(config: MelConfig) -> np.ndarray:
    """Triangular mel filterbank [n_mels, n_fft//2+1], unit peak response."""
    fmax = config.fmax if config.fmax is not None else config.sample_rate / 2.0
    fb, _ = _mel_filterbank_cached(config.n_mels, config.n_fft, config.sample_rate, config.fmin, fmax)
    return fb


def mel_center_frequencies(config: MelConfig) -> np.ndarray:
    fmax = config.fmax if config.fmax is not None else config.sample_rate / 2.0
    _, centers = _mel_filterbank_cached(config.n_mels, config.n_fft, config.sample_rate, config.fmin, fmax)
    return centers


def stft_power(waveform: np.ndarray, config: MelConfig) -> np.ndarray:
    """Power spectrogram [n_frames, n_fft//2+1] with centered reflect padding."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("waveform must be a non-empty 1-d array")
    pad = config.n_fft // 2
    # reflect padding needs at least pad+1 samples; fall back for stubs
    x = np.pad(x, pad, mode="reflect" if x.size > pad else "edge")
    window = np.hanning(config.win_length)
    if config.win_length < config.n_fft:
        lpad = (config.n_fft - config.win_length) // 2
        window = np.pad(window, (lpad, config.n_fft - config.win_length - lpad))
    n_frames = 1 + (len(x) - config.n_fft) // config.hop
    idx = np.arange(config.n_fft)[None, :] + config.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * window[None, :]
    spec = np.fft.rfft(frames, n=config.n_fft, axis=1)
    return np.abs(spec) ** 2


def compute_mel(waveform: np.ndarray, config: MelConfig | None = None) -> MelSpectrogram:
    """80-bin log-mel spectrogram of a mono waveform."""
    config = config or MelConfig()
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("waveform must be a non-empty 1-d array")
    power = stft_power(x, config)
    mel_power = power @ mel_filterbank(config).T
    log_mel = np.log(np.maximum(mel_power, config.log_floor))
    return MelSpectrogram(
        frames=log_mel,
        frame_rate=config.frame_rate,
        sample_rate=config.sample_rate,
        n_samples=x.size,
    )


def n_codes_for(n_samples: int, config: MelConfig) -> int:
    """ceil(duration * code_frame_rate) in exact integer arithmetic."""
    return -(-n_samples * config.code_frame_rate // config.sample_rate)


def downsample_to_code_rate(mel: MelSpectrogram, config: MelConfig) -> np.ndarray:
    """Mean-pool mel frames into exactly ceil(duration*25) contiguous groups."""
    n_codes = n_codes_for(mel.n_samples, config)
    if n_codes > mel.n_frames:
        raise ValueError(
            f"cannot pool {mel.n_frames} frames into {n_codes} groups; "
            "mel/frame-rate configs are inconsistent"
        )
    groups = np.array_split(mel.frames, n_codes, axis=0)
    return np.stack([g.mean(axis=0) for g in groups], axis=0)


def _pairwise_sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # (x - c)^2 expanded; clip tiny negatives from cancellation
    d2 = (
        np.sum(x**2, axis=1)[:, None]
        - 2.0 * (x @ c.T)
        + np.sum(c**2, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def train_codebook(
    mels: list[MelSpectrogram],
    K: int,
    seed: int = 0,
    config: MelConfig | None = None,
    max_iter: int = 200,
) -> VQCodebook:
    """Deterministic Lloyd k-means over code-rate pooled mel features."""
    config = config or MelConfig()
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if not mels:
        raise ValueError("no mel spectrograms supplied")
    feats = np.concatenate([downsample_to_code_rate(m, config) for m in mels], axis=0)
    feats = feats.astype(np.float64)
    n = feats.shape[0]
    if n < K:
        raise ValueError(f"{n} pooled frames cannot seed {K} clusters")

    rng = np.random.default_rng(seed)
    centroids = feats[rng.choice(n, size=K, replace=False)].copy()
    history: list[float] = []
    prev_assign: np.ndarray | None = None
    for _ in range(max_iter):
        d2 = _pairwise_sq_dists(feats, centroids)
        assign = np.argmin(d2, axis=1)
        history.append(float(np.mean(np.min(d2, axis=1))))
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        own = d2[np.arange(n), assign]
        for k in range(K):
            members = assign == k
            if np.any(members):
                centroids[k] = feats[members].mean(axis=0)
            else:
                # deterministic restart: point farthest from its own centroid
                centroids[k] = feats[int(np.argmax(own))]
    return VQCodebook(
        centroids=centroids.astype(np.float32),
        seed=seed,
        mel_config=config,
        objective_history=tuple(history),
    )


def encode_features(feats: np.ndarray, codebook: VQCodebook) -> SemanticCodes:
    """Nearest-centroid index per feature row; ties go to the lowest index."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != codebook.d:
        raise ValueError(
            f"feature dim {feats.shape} does not match codebook dim {codebook.d}"
        )
    d2 = _pairwise_sq_dists(feats, codebook.centroids.astype(np.float64))
    codes = np.argmin(d2, axis=1)
    return SemanticCodes(codes=tuple(int(c) for c in codes), frame_rate=float(codebook.mel_config.code_frame_rate))


def encode_semantic(mel: MelSpectrogram, codebook: VQCodebook) -> SemanticCodes:
    feats = downsample_to_code_rate(mel, codebook.mel_config)
    return encode_features(feats, codebook)


@functools.lru_cache(maxsize=4)
def _speaker_projection(n_features: int) -> np.ndarray:
    rng = np.random.default_rng(_SPEAKER_PROJECTION_SEED)
    return rng.standard_normal((SPEAKER_DIM, n_features)) / np.sqrt(n_features)


def speaker_embedding(
    waveform: np.ndarray, sample_rate: int, config: MelConfig | None = None
) -> SpeakerVector:
    """Statistics-pooling speaker vector: mel mean+std through a fixed projection."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.size / sample_rate < 0.5:
        raise ValueError(
            f"need at least 0.5 s of audio for a speaker vector, got {x.size / sample_rate:.3f} s"
        )
    if config is None or config.sample_rate != sample_rate:
        config = replace(config or MelConfig(), sample_rate=sample_rate)
    mel = compute_mel(x, config)
    stats = np.concatenate([mel.frames.mean(axis=0), mel.frames.std(axis=0)])
    vec = _speaker_projection(stats.size) @ stats
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        raise ValueError("degenerate speaker statistics (zero projection)")
    return SpeakerVector(embedding=vec / norm)


def save_codebook(codebook: VQCodebook, path: str | Path) -> None:
    """Raw little-endian float32 matrix plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    codebook.centroids.astype("<f4").tofile(path)
    sidecar = {
        "K": codebook.K,
        "d": codebook.d,
        "seed": codebook.seed,
        "mel_config": codebook.mel_config.to_dict(),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2), encoding="utf-8"
    )


def load_codebook(path: str | Path) -> VQCodebook:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    centroids = np.fromfile(path, dtype="<f4").reshape(sidecar["K"], sidecar["d"])
    return VQCodebook(
        centroids=centroids,
        seed=sidecar["seed"],
        mel_config=MelConfig.from_dict(sidecar["mel_config"]),
    )
