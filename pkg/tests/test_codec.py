"""Mel front-end, k-means vector quantizer, and speaker embedding."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convotts.codec import (
    MelConfig,
    MelSpectrogram,
    SpeakerVector,
    VQCodebook,
    compute_mel,
    downsample_to_code_rate,
    encode_features,
    encode_semantic,
    load_codebook,
    mel_center_frequencies,
    n_codes_for,
    save_codebook,
    speaker_embedding,
    train_codebook,
)

SR = 22050


def sine(freq: float, duration: float = 1.0, amp: float = 0.5, sr: int = SR) -> np.ndarray:
    t = np.arange(int(duration * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


# --- mel spectrogram --------------------------------------------------------


def test_silence_hits_log_floor():
    cfg = MelConfig()
    mel = compute_mel(np.zeros(SR), cfg)
    assert np.allclose(mel.frames, math.log(cfg.log_floor))


def test_mel_shape_and_rate():
    cfg = MelConfig()
    mel = compute_mel(sine(440.0), cfg)
    assert mel.n_mels == 80
    assert mel.frame_rate == pytest.approx(cfg.frame_rate)
    assert mel.n_samples == SR


def test_sine_energy_lands_in_matching_bin():
    cfg = MelConfig()
    mel = compute_mel(sine(1000.0), cfg)
    centers = mel_center_frequencies(cfg)
    expected_bin = int(np.argmin(np.abs(centers - 1000.0)))
    hottest = int(np.argmax(mel.frames.mean(axis=0)))
    assert abs(hottest - expected_bin) <= 1


def test_amplitude_doubling_adds_log4():
    cfg = MelConfig()
    quiet = compute_mel(sine(500.0, amp=0.2), cfg)
    loud = compute_mel(sine(500.0, amp=0.4), cfg)
    # power spectrogram: 2x amplitude = 4x power = +log 4 where above the floor
    hot = quiet.frames > math.log(cfg.log_floor) + 1.0
    diff = loud.frames[hot] - quiet.frames[hot]
    strongest = np.argsort(quiet.frames[hot])[-200:]
    assert np.allclose(diff[strongest], math.log(4.0), atol=1e-6)


def test_empty_waveform_rejected():
    with pytest.raises(ValueError):
        compute_mel(np.array([]))


# --- code-rate pooling ------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(duration_ms=st.integers(100, 3000))
def test_code_count_is_ceil_duration_times_25(duration_ms):
    cfg = MelConfig()
    n_samples = int(SR * duration_ms / 1000)
    expected = math.ceil(n_samples * 25 / SR)
    assert n_codes_for(n_samples, cfg) == expected


def test_downsample_group_count():
    cfg = MelConfig()
    mel = compute_mel(sine(300.0, duration=0.73), cfg)
    pooled = downsample_to_code_rate(mel, cfg)
    assert pooled.shape == (n_codes_for(mel.n_samples, cfg), 80)


# --- vector quantizer -------------------------------------------------------


def constant_mel(frame: np.ndarray, n_frames: int = 8, cfg: MelConfig | None = None):
    cfg = cfg or MelConfig()
    frames = np.tile(frame, (n_frames, 1))
    # n_samples chosen so pooling keeps every constant frame group intact
    return MelSpectrogram(
        frames=frames,
        frame_rate=cfg.frame_rate,
        sample_rate=cfg.sample_rate,
        n_samples=n_frames * cfg.hop,
    )


def cluster_corpus(seed=0, n_per_cluster=60, spread=0.05):
    rng = np.random.default_rng(seed)
    mean_a = np.full(80, 2.0)
    mean_b = np.full(80, -2.0)
    mels = []
    for mean in (mean_a, mean_b):
        for _ in range(n_per_cluster):
            mels.append(constant_mel(mean + rng.normal(0, spread, 80), n_frames=4))
    return mels, mean_a, mean_b


def test_two_cluster_centroids_recovered():
    mels, mean_a, mean_b = cluster_corpus()
    cb = train_codebook(mels, K=2, seed=0)
    cents = np.sort(cb.centroids[:, 0])  # identify clusters by the first coordinate
    assert abs(cents[0] - (-2.0)) < 0.1
    assert abs(cents[1] - 2.0) < 0.1
    for row in cb.centroids:
        target = mean_a if row[0] > 0 else mean_b
        assert np.max(np.abs(row - target)) < 0.1


def test_k1_centroid_is_global_mean():
    mels, _, _ = cluster_corpus(n_per_cluster=10)
    cb = train_codebook(mels, K=1, seed=0)
    feats = np.concatenate([downsample_to_code_rate(m, MelConfig()) for m in mels])
    assert np.allclose(cb.centroids[0], feats.mean(axis=0), atol=1e-5)


def test_codebook_deterministic():
    mels, _, _ = cluster_corpus()
    a = train_codebook(mels, K=4, seed=7)
    b = train_codebook(mels, K=4, seed=7)
    assert np.array_equal(a.centroids, b.centroids)


def test_too_few_frames_rejected():
    mels = [constant_mel(np.zeros(80), n_frames=4)]
    with pytest.raises(ValueError):
        train_codebook(mels, K=50, seed=0)


def test_objective_history_non_increasing():
    mels, _, _ = cluster_corpus(seed=3, n_per_cluster=40, spread=0.6)
    cb = train_codebook(mels, K=5, seed=1)
    hist = cb.objective_history
    assert len(hist) >= 1
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_encode_exact_centroid_frame():
    cents = np.stack([np.full(80, v) for v in (0.0, 1.0, 2.0, 3.0)]).astype(np.float32)
    cb = VQCodebook(centroids=cents, seed=0, mel_config=MelConfig())
    codes = encode_features(np.full((1, 80), 3.0), cb)
    assert codes.codes == (3,)


def test_encode_tie_breaks_low_index():
    cents = np.zeros((5, 80), dtype=np.float32)
    cents[1] = 1.0
    cents[4] = -1.0
    cents[0] = 5.0
    cents[2] = 7.0
    cents[3] = 9.0
    cb = VQCodebook(centroids=cents, seed=0, mel_config=MelConfig())
    # equidistant between centroids 1 (+1) and 4 (-1)
    codes = encode_features(np.zeros((1, 80)), cb)
    assert codes.codes == (1,)


def test_encode_idempotent_on_reconstruction():
    mels, _, _ = cluster_corpus(seed=5, n_per_cluster=20, spread=0.4)
    cb = train_codebook(mels, K=6, seed=2)
    codes = encode_semantic(mels[0], cb)
    recon = cb.centroids[np.asarray(codes.codes)].astype(np.float64)
    again = encode_features(recon, cb)
    assert again.codes == codes.codes


def test_duplicate_centroids_rejected():
    cents = np.zeros((2, 80), dtype=np.float32)
    with pytest.raises(ValueError):
        VQCodebook(centroids=cents, seed=0, mel_config=MelConfig())


def test_codebook_save_load_roundtrip(tmp_path):
    mels, _, _ = cluster_corpus(n_per_cluster=10)
    cb = train_codebook(mels, K=3, seed=0)
    path = tmp_path / "cb.f32"
    save_codebook(cb, path)
    loaded = load_codebook(path)
    assert np.array_equal(loaded.centroids, cb.centroids)
    # hop_length=None is resolved on save; compare the canonical forms
    assert loaded.mel_config.to_dict() == cb.mel_config.to_dict()


# --- speaker embedding ------------------------------------------------------


def test_speaker_vector_dim_and_norm():
    v = speaker_embedding(sine(180.0), SR)
    assert v.embedding.shape == (192,)
    assert abs(np.linalg.norm(v.embedding) - 1.0) < 1e-6


def test_speaker_vector_deterministic():
    wav = sine(150.0)
    a = speaker_embedding(wav, SR)
    b = speaker_embedding(wav, SR)
    assert a.cosine(b) == pytest.approx(1.0, abs=1e-12)


def test_different_voices_not_identical():
    a = speaker_embedding(sine(120.0), SR)
    b = speaker_embedding(sine(240.0), SR)
    assert a.cosine(b) < 1.0 - 1e-6


def test_short_audio_rejected():
    with pytest.raises(ValueError):
        speaker_embedding(sine(200.0, duration=0.3), SR)


def test_random_audio_norms():
    rng = np.random.default_rng(0)
    for _ in range(5):
        wav = rng.normal(0, 0.1, SR)
        v = speaker_embedding(wav, SR)
        assert abs(np.linalg.norm(v.embedding) - 1.0) < 1e-6


def test_speaker_vector_unit_norm_enforced():
    with pytest.raises(ValueError):
        SpeakerVector(embedding=np.ones(192))
