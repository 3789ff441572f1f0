"""Acceptance gate: twelve independently checkable criteria, one test each.

Each criterion gets exactly one test function so `pytest -v` prints one
pass/fail line per criterion. Expected values are either closed-form,
recomputed in-line from an independent oracle, or pinned constants.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time

import numpy as np
import pytest
import torch

from convotts.audio import write_wav
from convotts.captioning.features import (
    DEFAULT_THRESHOLDS,
    classify_level,
    extract_energy,
    extract_pitch,
)
from convotts.captioning.llm import MockLLMClient
from convotts.captioning.pipeline import annotate_corpus, write_caption_log
from convotts.cli import main as cli_main
from convotts.codec import MelConfig
from convotts.corpus import DialogueSession, Utterance, load_corpus, save_corpus
from convotts.flow import (
    CFMConfig,
    MelFieldModel,
    build_conditioning,
    cfm_loss,
    cfm_loss_at,
    euler_solve,
    ot_flow,
    target_field,
)
from convotts.lm import (
    DialogueLM,
    LMConfig,
    chain_generate,
    chain_loss,
    chain_loss_tensors,
    collate_targets,
    greedy_sampling,
    teacher_forcing_accuracy,
)
from convotts.metrics import MetricReport, distinct_n, dtw_alignment, dtw_distance
from convotts.tokenizer import (
    VocabSpec,
    build_sequence,
    build_training_target,
    expected_special_counts,
    parse_layout,
    special_token_counts,
)
from convotts.toydata import make_toy_corpus, synth_voice
from convotts.training import (
    RunConfig,
    fit_preprocessors,
    inference_prompt,
    load_lm_checkpoint,
    prepare_corpus,
    stage1_target,
    stage2_target,
    train_lm,
)
from tests.conftest import make_turn
from tests.oracles import brute_force_dtw

SR = 22050


def sine(freq: float, seconds: float = 1.0, amp: float = 0.3) -> np.ndarray:
    t = np.arange(int(SR * seconds)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


# --- shared corpora ---------------------------------------------------------------

CHAIN_TEXTS = [
    ("how does the weather look", "clear skies all afternoon"),
    ("did the parcel arrive yet", "it came an hour ago"),
    ("what should we cook tonight", "soup with fresh bread"),
    ("is the report finished", "two sections still remain"),
    ("when does the train leave", "quarter past nine sharp"),
    ("can you dim the lights", "done they are lower now"),
    ("who won the match", "the visitors by one goal"),
    ("where did i leave my keys", "on the kitchen counter"),
]

CHAIN_CAPTIONS = [
    "calm low tone",
    "bright rising voice",
    "soft steady murmur",
    "clipped formal tone",
    "warm friendly lilt",
    "flat quiet delivery",
    "lively upbeat tone",
    "slow patient voice",
]


@pytest.fixture(scope="module")
def chain_setup(tmp_path_factory):
    """8 two-turn captioned dialogues with audio, plus fitted preprocessors."""
    audio_dir = tmp_path_factory.mktemp("chain_audio")
    sessions = []
    for k, (user_text, agent_text) in enumerate(CHAIN_TEXTS):
        turns = []
        for i, (role, text) in enumerate((("user", user_text), ("agent", agent_text))):
            f0 = 205.0 + 3 * k if role == "user" else 100.0 + 6 * k
            wav = synth_voice(f0, 0.55 + 0.015 * k, SR, 0.04, seed=100 * k + i)
            path = audio_dir / f"d{k}_t{i}.wav"
            write_wav(path, wav, SR)
            turns.append(
                Utterance(
                    speaker_id=f"spk{k}_{role}",
                    role=role,
                    text=text,
                    audio_path=path,
                    caption=CHAIN_CAPTIONS[(k + i) % len(CHAIN_CAPTIONS)],
                )
            )
        sessions.append(DialogueSession(session_id=f"dlg{k}", turns=tuple(turns)))
    cfg = RunConfig(
        seed=11,
        bpe_vocab_size=256,
        code_vocab_size=64,
        n_window=2,
        batch_size=8,
        learning_rate=1e-3,
        warmup_steps=20,
        max_steps=2000,
        checkpoint_every=100000,
        n_layers=2,
        model_dim=96,
        n_heads=4,
        max_seq_len=320,
        dropout_rate=0.0,
    )
    pre = fit_preprocessors(sessions, cfg)
    prepared = prepare_corpus(sessions, pre)
    return sessions, pre, prepared, cfg


@pytest.fixture(scope="module")
def annotated_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept_toy")
    manifest = make_toy_corpus(root, n_sessions=8, seed=0)
    out = root / "annotated.jsonl"
    code = cli_main(
        ["annotate", "--manifest", str(manifest), "--out", str(out), "--seed", "0"]
    )
    assert code == 0
    return out


# --- criterion 1 ------------------------------------------------------------------


def test_criterion_01_layout_parse_and_special_counts():
    started = time.monotonic()
    vocab = VocabSpec(bpe_vocab_size=40, code_vocab_size=8)
    rng = np.random.default_rng(0)
    for trial in range(1000):
        n_history = int(rng.integers(0, 4))
        include = bool(rng.integers(0, 2))
        with_tail = bool(rng.integers(0, 2))
        history = [make_turn(vocab, seed=int(rng.integers(1 << 30))) for _ in range(n_history)]
        target = make_turn(vocab, seed=int(rng.integers(1 << 30)))
        seq = build_sequence(
            history,
            target,
            vocab,
            target_caption_ids=target.caption_ids if (with_tail and include) else None,
            target_codes=target.codes if with_tail else None,
            include_captions=include,
        )
        parsed = parse_layout(seq.ids, vocab)
        expected_layout = seq.layout
        if not include and n_history == 0 and not with_tail:
            # both framings emit identical ids here; the parser reports the
            # captioned one by documented convention
            expected_layout = dataclasses.replace(expected_layout, captions_included=True)
        assert parsed == expected_layout, f"trial {trial}: layout mismatch"
        assert special_token_counts(seq.ids, vocab) == expected_special_counts(
            n_history,
            include_captions=include,
            target_caption=with_tail and include,
            target_codes=with_tail,
        ), f"trial {trial}: special counts mismatch"
    assert time.monotonic() - started < 30.0


# --- criterion 2 ------------------------------------------------------------------


def test_criterion_02_uniform_loss_and_mask_sizes():
    vocab = VocabSpec(bpe_vocab_size=40, code_vocab_size=8)
    for n_history, n_caption, n_codes in ((0, 3, 4), (1, 1, 1), (2, 5, 2)):
        history = [make_turn(vocab, seed=10 + j) for j in range(n_history)]
        target = make_turn(
            vocab, seed=90 + n_history, n_caption=n_caption, n_codes=n_codes
        )
        seq = build_sequence(
            history,
            target,
            vocab,
            target_caption_ids=target.caption_ids,
            target_codes=target.codes,
            include_captions=True,
        )
        t = build_training_target(seq, vocab)
        assert int(t.caption_mask.sum()) == n_caption + 1  # caption ids + CAPTION_END
        assert int(t.speech_mask.sum()) == n_codes + 1  # codes + CODES_END
        assert not np.any(t.caption_mask & t.speech_mask)

        V = vocab.total_size
        logits = torch.zeros(len(t.target_ids), V, dtype=torch.float64)
        l_cap, l_sp, total = chain_loss(logits, t)
        assert abs(float(l_cap) - math.log(V)) < 1e-9
        assert abs(float(l_sp) - math.log(V)) < 1e-9
        assert abs(float(total) - 2 * math.log(V)) < 1e-9


# --- criterion 3 ------------------------------------------------------------------


def test_criterion_03_chain_overfit_and_greedy_reproduction(chain_setup, tmp_path):
    started = time.monotonic()
    _, pre, prepared, cfg = chain_setup
    keys = prepared.keys_for_stage(2)
    assert len(keys) == 8
    eval_targets = [
        stage2_target(prepared, key, n_turns, pre)
        for key in keys
        for n_turns in (1, 2)
    ]

    def reached_full_accuracy(step: int, model: DialogueLM) -> bool:
        if (step + 1) % 25 != 0:
            return False
        return teacher_forcing_accuracy(model, eval_targets, pre.vocab) == 1.0

    final = train_lm(
        prepared,
        pre,
        cfg,
        stage=2,
        out_dir=tmp_path,
        stop_condition=reached_full_accuracy,
    )
    model, meta, _ = load_lm_checkpoint(final)
    assert meta["step"] <= 2000
    accuracy = teacher_forcing_accuracy(model, eval_targets, pre.vocab)
    assert accuracy >= 0.99, f"teacher-forcing accuracy {accuracy:.4f} after {meta['step']} steps"

    for key in keys:
        seq = inference_prompt(prepared, key, cfg.n_window, pre)
        out = chain_generate(model, seq, greedy_sampling())
        want = prepared.turns[key].tokens
        assert out.caption_ids == want.caption_ids, f"caption mismatch for {key}"
        assert out.codes.codes == want.codes, f"code mismatch for {key}"
        assert out.caption_stop == "caption_end" and out.code_stop == "codes_end"

    assert time.monotonic() - started < 900.0


# --- criterion 4 ------------------------------------------------------------------


def _finite_difference_check(loss_fn, model, rng, n_samples: int, h: float = 1e-4):
    loss = loss_fn()
    model.zero_grad(set_to_none=True)
    loss.backward()
    params = [p for p in model.parameters() if p.requires_grad and p.grad is not None]
    sizes = np.array([p.numel() for p in params])
    offsets = np.cumsum(sizes)
    checked = 0
    for flat_index in rng.choice(int(offsets[-1]), size=n_samples, replace=False):
        pi = int(np.searchsorted(offsets, flat_index, side="right"))
        local = int(flat_index - (offsets[pi - 1] if pi else 0))
        param = params[pi]
        analytic = float(param.grad.reshape(-1)[local])
        flat = param.data.reshape(-1)
        orig = float(flat[local])
        with torch.no_grad():
            flat[local] = orig + h
            up = float(loss_fn())
            flat[local] = orig - h
            down = float(loss_fn())
            flat[local] = orig
        numeric = (up - down) / (2 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        assert rel < 1e-3, (
            f"gradient mismatch at param {pi} index {local}: "
            f"analytic {analytic:.3e} vs numeric {numeric:.3e} (rel {rel:.2e})"
        )
        checked += 1
    return checked


def test_criterion_04_gradients_match_finite_differences():
    torch.manual_seed(0)
    vocab = VocabSpec(bpe_vocab_size=24, code_vocab_size=6)
    lm = DialogueLM(
        LMConfig(n_layers=1, model_dim=16, n_heads=2, max_seq_len=64, dropout_rate=0.0),
        vocab,
    ).double()
    targets = []
    for seed in (3, 7):
        turn = make_turn(vocab, seed=seed)
        seq = build_sequence(
            [make_turn(vocab, seed=seed + 50)],
            turn,
            vocab,
            target_caption_ids=turn.caption_ids,
            target_codes=turn.codes,
            include_captions=True,
        )
        targets.append(build_training_target(seq, vocab))
    batch = collate_targets(targets, vocab, dtype=torch.float64)

    def lm_loss():
        logits = lm(batch["input_ids"], batch["speaker_vectors"], batch["speaker_mask"])
        _, _, total = chain_loss_tensors(
            logits, batch["target_ids"], batch["caption_mask"], batch["speech_mask"]
        )
        return total

    rng = np.random.default_rng(1)
    checked = _finite_difference_check(lm_loss, lm, rng, n_samples=100)

    cfg = CFMConfig(
        feature_dim=6,
        cond_width=12,
        code_vocab_size=4,
        code_embed_dim=4,
        caption_embed_dim=8,
        speaker_dim=8,
        hidden_dim=16,
        n_blocks=1,
        frames_per_code=2,
    )
    torch.manual_seed(1)
    renderer = MelFieldModel(cfg).double()
    gen_rng = np.random.default_rng(2)
    cfm_batch = []
    for codes in ((0, 2, 1), (3, 1)):
        bundle = build_conditioning(
            codes,
            gen_rng.standard_normal(cfg.caption_embed_dim),
            gen_rng.standard_normal(cfg.speaker_dim),
            cfg,
            dtype=torch.float64,
        )
        x1 = torch.as_tensor(
            gen_rng.standard_normal((len(codes) * cfg.frames_per_code, cfg.feature_dim))
        )
        cfm_batch.append((x1, bundle))

    def renderer_loss():
        # a fresh identically seeded generator keeps (t, X0) fixed across calls
        gen = torch.Generator().manual_seed(99)
        return cfm_loss(renderer, cfm_batch, gen, cfg.sigma_min, "l2")

    checked += _finite_difference_check(renderer_loss, renderer, rng, n_samples=100)
    assert checked >= 100


# --- criterion 5 ------------------------------------------------------------------


def test_criterion_05_flow_analytics():
    gen = torch.Generator().manual_seed(5)
    x0 = torch.randn(7, 3, dtype=torch.float64, generator=gen)
    x1 = torch.randn(7, 3, dtype=torch.float64, generator=gen)
    sigma = 0.2

    assert torch.equal(ot_flow(x0, x1, 0.0, sigma), x0)
    assert torch.equal(ot_flow(x0, x1, 1.0, 0.0), x1)
    assert torch.allclose(ot_flow(x0, x1, 1.0, sigma), sigma * x0 + x1, atol=1e-12)

    h = 1e-6
    omega = target_field(x0, x1, sigma)
    for t in (0.2, 0.5, 0.8):
        derivative = (ot_flow(x0, x1, t + h, sigma) - ot_flow(x0, x1, t - h, sigma)) / (2 * h)
        assert torch.allclose(derivative, omega, atol=1e-8)

    oracle = lambda x, t: target_field(x0, x1, sigma)  # noqa: E731
    for t in (0.0, 0.31, 1.0):
        assert float(cfm_loss_at(oracle, x1, x0, t, sigma)) < 1e-12

    start = torch.randn(5, 2, dtype=torch.float64, generator=gen)
    exact = start * math.exp(-1.0)
    decay = lambda x, t: -x  # noqa: E731
    errors = {
        n: float((euler_solve(decay, start.shape, n, x0=start) - exact).abs().max())
        for n in (100, 1000)
    }
    ratio = errors[100] / errors[1000]
    assert 10.0 / 1.5 < ratio < 10.0 * 1.5


# --- criterion 6 ------------------------------------------------------------------


def test_criterion_06_cfm_recovers_mixture_means():
    started = time.monotonic()
    cfg = CFMConfig(
        feature_dim=2,
        cond_width=16,
        code_vocab_size=2,
        code_embed_dim=4,
        caption_embed_dim=4,
        speaker_dim=4,
        hidden_dim=64,
        n_blocks=2,
        frames_per_code=1,
    )
    torch.manual_seed(0)
    model = MelFieldModel(cfg)
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3)
    means = np.array([[-1.5, 2.0], [1.5, -2.0]])
    spread = 0.3
    caption = np.zeros(cfg.caption_embed_dim)
    speaker = np.zeros(cfg.speaker_dim)
    rng = np.random.default_rng(0)

    # samples ride along the frame axis: the field net is per-row, so one
    # "utterance" of N frames is N independent draws with per-frame codes
    for step in range(5000):
        batch = []
        for _ in range(2):
            comp = rng.integers(0, 2, 64)
            x1 = torch.as_tensor(
                means[comp] + spread * rng.standard_normal((64, 2)),
                dtype=torch.float32,
            )
            bundle = build_conditioning(comp.tolist(), caption, speaker, cfg)
            batch.append((x1, bundle))
        gen = torch.Generator().manual_seed(step)
        loss = cfm_loss(model, batch, gen, cfg.sigma_min, "l2")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

    model.eval()
    for k in (0, 1):
        bundle = build_conditioning([k] * 500, caption, speaker, cfg)
        with torch.no_grad():
            samples = euler_solve(
                lambda x, t: model(x, t, bundle),
                (500, 2),
                n_steps=50,
                generator=torch.Generator().manual_seed(100 + k),
            )
        generated_mean = samples.mean(dim=0).numpy()
        assert np.all(np.abs(generated_mean - means[k]) < 0.1), (
            f"component {k}: generated mean {generated_mean}, data mean {means[k]}"
        )
    assert time.monotonic() - started < 300.0


# --- criterion 7 ------------------------------------------------------------------


def test_criterion_07_style_thresholds_and_classification():
    assert DEFAULT_THRESHOLDS.pitch == (136.577, 196.098)
    assert DEFAULT_THRESHOLDS.tempo == (0.252, 0.386)
    assert DEFAULT_THRESHOLDS.energy == (0.033, 0.0505)

    low = extract_pitch(sine(110.0), SR)
    high = extract_pitch(sine(220.0), SR)
    assert classify_level(low, DEFAULT_THRESHOLDS.pitch) == "low"
    assert classify_level(high, DEFAULT_THRESHOLDS.pitch) == "high"

    assert classify_level(extract_energy(np.zeros(SR), SR), DEFAULT_THRESHOLDS.energy) == "low"
    square = np.sign(sine(100.0, amp=1.0))
    assert classify_level(extract_energy(square, SR), DEFAULT_THRESHOLDS.energy) == "high"
    rms = extract_energy(sine(200.0, amp=0.06), SR)
    assert rms == pytest.approx(0.0424, abs=2e-3)
    assert classify_level(rms, DEFAULT_THRESHOLDS.energy) == "normal"


# --- criterion 8 ------------------------------------------------------------------


def test_criterion_08_annotation_byte_identical(tmp_path):
    manifest = make_toy_corpus(tmp_path / "corpus", n_sessions=3, seed=1)
    sessions = load_corpus(manifest)
    outputs = []
    for tag in ("a", "b"):
        annotated, records = annotate_corpus(sessions, MockLLMClient(), seed=5)
        manifest_path = tmp_path / f"annotated_{tag}.jsonl"
        log_path = tmp_path / f"captions_{tag}.jsonl"
        save_corpus(annotated, manifest_path)
        write_caption_log(records, log_path)
        outputs.append((manifest_path.read_bytes(), log_path.read_bytes()))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]


# --- criterion 9 ------------------------------------------------------------------


def test_criterion_09_dtw_equals_brute_force():
    # integer-valued inputs keep every path cost exact, so ties and the
    # normalized distance compare bitwise
    rng = np.random.default_rng(9)
    for trial in range(200):
        a = rng.integers(0, 9, size=rng.integers(1, 7)).astype(np.float64)
        b = rng.integers(0, 9, size=rng.integers(1, 7)).astype(np.float64)
        expected_cost, expected_len = brute_force_dtw(a, b)
        assert dtw_alignment(a, b) == (expected_cost, expected_len), f"trial {trial}"
        assert dtw_distance(a, b) == expected_cost / expected_len


# --- criterion 10 -----------------------------------------------------------------


def test_criterion_10_distinct_n_values_and_invariance():
    assert distinct_n(["a b a"], 1) == pytest.approx(2 / 3)
    assert distinct_n(["a b", "a b"], 2) == pytest.approx(1 / 2)

    rng = np.random.default_rng(10)
    words = ["a", "b", "c", "d", "e"]
    for _ in range(30):
        texts = [
            " ".join(rng.choice(words, size=rng.integers(1, 6)))
            for _ in range(int(rng.integers(1, 8)))
        ]
        for n in (1, 2):
            try:
                reference = distinct_n(texts, n)
            except ValueError:
                continue  # no n-grams at this order; nothing to compare
            for _ in range(3):
                shuffled = list(texts)
                rng.shuffle(shuffled)
                assert distinct_n(shuffled, n) == reference


# --- criterion 11 -----------------------------------------------------------------


def test_criterion_11_end_to_end_smoke(annotated_manifest, tmp_path):
    started = time.monotonic()
    workdir = tmp_path / "run"
    common = [
        "--manifest", str(annotated_manifest),
        "--workdir", str(workdir),
        "--seed", "0",
        "--split", "1,0,0",
        "--bpe-vocab-size", "280",
        "--code-vocab-size", "16",
        "--batch-size", "4",
        "--model-dim", "96",
        "--checkpoint-every", "1000",
    ]
    assert cli_main(["train-emgpt", "--stage", "1", "--max-steps", "200"] + common) == 0
    assert cli_main(["train-emgpt", "--stage", "2", "--max-steps", "500"] + common) == 0
    assert cli_main(["train-cfm", "--max-steps", "500"] + common) == 0

    code = cli_main([
        "synth",
        "--manifest", str(annotated_manifest),
        "--workdir", str(workdir),
        "--session-id", "toy000",
        "--turn-index", "1",
        "--seed", "0",
        "--wav",
    ])
    assert code == 0

    prefix = workdir / "synth" / "toy000_turn01"
    caption = (prefix.parent / (prefix.name + ".caption.txt")).read_text().strip()
    assert isinstance(caption, str) and caption

    codes_blob = json.loads((prefix.parent / (prefix.name + ".codes.json")).read_text())
    codes = codes_blob["codes"]
    assert codes and all(0 <= c < 16 for c in codes)

    mel_meta = json.loads((prefix.parent / (prefix.name + ".mel.json")).read_text())
    mel_config = MelConfig()
    assert mel_meta["n_mels"] == mel_config.n_mels
    assert mel_meta["n_frames"] == len(codes) * mel_config.frames_per_code
    mel_bytes = (prefix.parent / (prefix.name + ".mel.f32")).stat().st_size
    assert mel_bytes == mel_meta["n_frames"] * mel_meta["n_mels"] * 4

    # reference audio and caption for the synthesized turn
    session = next(s for s in load_corpus(annotated_manifest) if s.session_id == "toy000")
    ref = session.turns[1]
    pairs = {
        "pairs": [
            [str(ref.audio_path), str(prefix) + ".wav"],
            [str(ref.audio_path), str(ref.audio_path)],
        ],
        "captions": [[caption, ref.caption]],
        "emotions": [[ref.emotion, ref.emotion]],
    }
    pairs_path = tmp_path / "pairs.json"
    pairs_path.write_text(json.dumps(pairs))
    report_path = tmp_path / "report.json"
    code = cli_main([
        "eval",
        "--pairs", str(pairs_path),
        "--out", str(report_path),
        "--checkpoint", str(workdir / "checkpoints" / "lm_stage2_final.pt"),
    ])
    assert code == 0
    report = MetricReport.from_dict(json.loads(report_path.read_text()))
    assert report.acc == 1.0
    assert report.config_hash

    assert time.monotonic() - started < 1800.0


# --- criterion 12 -----------------------------------------------------------------


def _experiment_events(workdir):
    path = workdir / "logs" / "experiment.jsonl"
    return [json.loads(line) for line in path.read_text().splitlines()]


def _ablation_tags(events):
    return {e["tag"] for e in events if e["event"] == "ablation"}


def test_criterion_12_ablation_plumbing(chain_setup, annotated_manifest, tmp_path):
    _, pre, prepared, _ = chain_setup
    key = prepared.keys_for_stage(2)[0]

    # "w/o context": the loop pins n_turns=1, which must yield empty history
    target = stage2_target(prepared, key, 1, pre)
    full = [int(x) for x in target.input_ids] + [int(target.target_ids[-1])]
    assert parse_layout(full, pre.vocab).history == ()

    # "w/o captions": no caption supervision and no caption phase at inference
    for builder in (
        lambda: stage1_target(prepared, key, pre, use_captions=False),
        lambda: stage2_target(prepared, key, 2, pre, use_captions=False),
    ):
        t = builder()
        assert int(t.caption_mask.sum()) == 0
        assert int(t.speech_mask.sum()) > 0
    prompt = inference_prompt(prepared, key, 2, pre, use_captions=False)
    torch.manual_seed(0)
    probe = DialogueLM(
        LMConfig(n_layers=1, model_dim=16, n_heads=2, max_seq_len=320, dropout_rate=0.0),
        pre.vocab,
    )
    out = chain_generate(probe, prompt, greedy_sampling(), max_code_len=4)
    assert out.caption_stop == "skipped" and out.caption_ids == ()

    # "w/o L^caption" must be a legal configuration
    assert RunConfig(caption_loss_weight=0.0).caption_loss_weight == 0.0

    # CLI flags land in the experiment log and the loss CSV
    flags = [
        "--manifest", str(annotated_manifest),
        "--split", "1,0,0",
        "--max-steps", "2",
        "--bpe-vocab-size", "258",
        "--code-vocab-size", "8",
        "--batch-size", "2",
        "--model-dim", "32",
        "--checkpoint-every", "100",
    ]

    wd = tmp_path / "no_context"
    assert cli_main(["train-emgpt", "--stage", "1", "--no-context", "--workdir", str(wd)] + flags) == 0
    events = _experiment_events(wd)
    assert "w/o context" in _ablation_tags(events)
    assert events[0]["merged"]["use_context"] is False

    wd = tmp_path / "no_captions"
    assert cli_main(["train-emgpt", "--stage", "1", "--no-captions", "--workdir", str(wd)] + flags) == 0
    events = _experiment_events(wd)
    assert "w/o captions" in _ablation_tags(events)
    rows = (wd / "checkpoints" / "lm_stage1_train_log.csv").read_text().splitlines()[1:]
    # with the caption phase skipped there are no caption positions to score
    assert all(float(row.split(",")[1]) == 0.0 for row in rows)

    wd = tmp_path / "no_caption_loss"
    code = cli_main(
        ["train-emgpt", "--stage", "1", "--caption-loss-weight", "0", "--workdir", str(wd)] + flags
    )
    assert code == 0
    events = _experiment_events(wd)
    assert "w/o L^caption" in _ablation_tags(events)
    assert events[0]["merged"]["caption_loss_weight"] == 0.0
    rows = (wd / "checkpoints" / "lm_stage1_train_log.csv").read_text().splitlines()[1:]
    # the raw caption loss is still measured; only its weight is zeroed
    assert any(float(row.split(",")[1]) > 0.0 for row in rows)

    wd = tmp_path / "from_scratch"
    code = cli_main(
        ["train-emgpt", "--stage", "2", "--from-scratch", "--workdir", str(wd)] + flags
    )
    assert code == 0
    assert "w/o First-Stage" in _ablation_tags(_experiment_events(wd))
