"""Command-line harness: annotate, train-emgpt, train-cfm, synth, eval, stats.

Exit codes: 0 success, 2 usage (bad arguments, missing input files),
3 data errors (malformed manifests, wavs, pair lists), 4 runtime failures.
Config precedence is CLI flags > --config file > built-in defaults; the merged
result is echoed into the experiment log for auditability.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import read_wav, write_wav
from .captioning import (
    AttributeThresholds,
    DEFAULT_THRESHOLDS,
    HttpLLMClient,
    LLMTransportError,
    MockLLMClient,
    annotate_corpus,
    write_caption_log,
)
from .codec import compute_mel, encode_semantic, speaker_embedding
from .corpus import (
    ManifestError,
    SplitSpec,
    ValidationError,
    corpus_stats,
    load_corpus,
    save_corpus,
    split_corpus,
)
from .flow import mel_to_waveform, synthesize
from .lm import chain_generate, generate_caption
from .metrics import (
    MetricReport,
    accuracy,
    caption_similarity,
    distinct_n,
    dtw_distance,
    pitch_for_dtw,
    ssim_proxy,
)
from .tokenizer import ParseError, TurnTokens, build_sequence
from .training import (
    ExperimentLog,
    Preprocessors,
    RunConfig,
    fit_preprocessors,
    load_cfm_checkpoint,
    load_lm_checkpoint,
    load_preprocessors,
    prepare_corpus,
    save_preprocessors,
    train_cfm,
    train_lm,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class UsageError(Exception):
    """Bad invocation: wrong flags or missing input files."""


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _provenance(cfg: RunConfig) -> str:
    return f"convotts/{__version__}+cfg.{cfg.config_hash()}"


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"--split needs three comma-separated ratios, got {text!r}")
    try:
        r = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"bad --split value {text!r}: {exc}") from exc
    return r  # type: ignore[return-value]


def _load_thresholds(spec_text: str) -> AttributeThresholds:
    if spec_text == "default":
        return DEFAULT_THRESHOLDS
    path = _require_file(spec_text, "thresholds file")
    return AttributeThresholds.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _make_client(args: argparse.Namespace):
    if args.llm == "mock":
        return MockLLMClient()
    if not args.endpoint:
        raise UsageError("--llm http requires --endpoint")
    return HttpLLMClient(args.endpoint)


_CONFIG_FLAGS = (
    "seed",
    "bpe_vocab_size",
    "code_vocab_size",
    "n_window",
    "batch_size",
    "learning_rate",
    "warmup_steps",
    "max_steps",
    "caption_loss_weight",
    "checkpoint_every",
    "n_layers",
    "model_dim",
    "max_seq_len",
    "dropout_rate",
)


def _build_run_config(args: argparse.Namespace) -> RunConfig:
    """defaults < --config file < explicit CLI flags."""
    if getattr(args, "config", None):
        cfg = RunConfig.from_file(_require_file(args.config, "config file"))
    else:
        cfg = RunConfig()
    overrides = {
        name: getattr(args, name)
        for name in _CONFIG_FLAGS
        if getattr(args, name, None) is not None
    }
    if getattr(args, "no_context", False):
        overrides["use_context"] = False
    if getattr(args, "no_captions", False):
        overrides["use_captions"] = False
    return cfg.merged(**overrides)


def _ensure_preprocessors(workdir: Path, train_sessions, cfg: RunConfig) -> Preprocessors:
    pp_dir = workdir / "preprocessors"
    if all((pp_dir / n).exists() for n in ("bpe.json", "codebook.f32", "vocab.json")):
        return load_preprocessors(pp_dir)
    pre = fit_preprocessors(train_sessions, cfg)
    save_preprocessors(pre, pp_dir)
    return pre


def _log_ablations(exp: ExperimentLog, cfg: RunConfig) -> None:
    if not cfg.use_context:
        exp.log("ablation", tag="w/o context")
    if not cfg.use_captions:
        exp.log("ablation", tag="w/o captions")
    if cfg.caption_loss_weight == 0.0:
        exp.log("ablation", tag="w/o L^caption")


# ---------------------------------------------------------------------------
# annotate


def cmd_annotate(args: argparse.Namespace) -> int:
    manifest = _require_file(args.manifest, "manifest")
    if args.alignments is not None:
        _require_file(args.alignments, "alignments directory")
    sessions = load_corpus(manifest)
    thresholds = _load_thresholds(args.thresholds)
    client = _make_client(args)
    annotated, records = annotate_corpus(
        sessions,
        client,
        thresholds=thresholds,
        seed=args.seed,
        alignments_dir=args.alignments,
        use_llm_verification=args.llm_verify,
    )
    out = Path(args.out)
    save_corpus(annotated, out)
    log_path = Path(args.log) if args.log else out.parent / (out.stem + ".captions.jsonl")
    write_caption_log(records, log_path)
    print(f"annotated {len(records)} utterances -> {out}")
    print(f"caption log -> {log_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# training


def _split_sessions(sessions, cfg: RunConfig, split_text: str):
    spec = SplitSpec(ratios=_parse_ratios(split_text), seed=cfg.seed)
    return split_corpus(sessions, spec)


def cmd_train_emgpt(args: argparse.Namespace) -> int:
    manifest = _require_file(args.manifest, "manifest")
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    cfg = _build_run_config(args)

    init_from = _require_file(args.init_from, "checkpoint") if args.init_from else None
    resume_from = _require_file(args.resume_from, "checkpoint") if args.resume_from else None
    if args.stage == 2 and not args.from_scratch and init_from is None and resume_from is None:
        default_ckpt = workdir / "checkpoints" / "lm_stage1_final.pt"
        if not default_ckpt.exists():
            raise UsageError(
                "stage 2 needs a stage-1 checkpoint (--init-from PATH) or --from-scratch"
            )
        init_from = default_ckpt

    sessions = load_corpus(manifest)
    train, valid, test = _split_sessions(sessions, cfg, args.split)
    train_ids = {s.session_id for s in train}

    pre = _ensure_preprocessors(workdir, train, cfg)
    prepared = prepare_corpus(train, pre)
    leaked = {sid for sid, _ in prepared.turns} - train_ids
    if leaked:
        raise RuntimeError(f"training examples leaked from outside the train split: {leaked}")

    exp = ExperimentLog(workdir / "logs" / "experiment.jsonl")
    exp.log(
        "config",
        command="train-emgpt",
        stage=args.stage,
        merged=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        provenance=_provenance(cfg),
        split={
            "train": sorted(train_ids),
            "valid": sorted(s.session_id for s in valid),
            "test": sorted(s.session_id for s in test),
        },
    )
    _log_ablations(exp, cfg)
    if args.stage == 2 and args.from_scratch:
        log.info('stage 2 from random initialization: "w/o First-Stage"')
        exp.log("ablation", tag="w/o First-Stage")

    ckpt = train_lm(
        prepared,
        pre,
        cfg,
        stage=args.stage,
        out_dir=workdir / "checkpoints",
        init_from=init_from,
        resume_from=resume_from,
        exp_log=exp,
    )
    print(f"final checkpoint: {ckpt}")
    return EXIT_OK


def cmd_train_cfm(args: argparse.Namespace) -> int:
    manifest = _require_file(args.manifest, "manifest")
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    cfg = _build_run_config(args)

    resume_from = _require_file(args.resume_from, "checkpoint") if args.resume_from else None
    sessions = load_corpus(manifest)
    train, valid, test = _split_sessions(sessions, cfg, args.split)
    pre = _ensure_preprocessors(workdir, train, cfg)
    prepared = prepare_corpus(train, pre)

    exp = ExperimentLog(workdir / "logs" / "experiment.jsonl")
    exp.log(
        "config",
        command="train-cfm",
        merged=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        provenance=_provenance(cfg),
    )
    ckpt = train_cfm(
        prepared,
        pre,
        cfg,
        out_dir=workdir / "checkpoints",
        resume_from=resume_from,
        exp_log=exp,
    )
    print(f"final checkpoint: {ckpt}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synthesis


def _turn_tokens(turn, pre: Preprocessors, caption: str | None) -> TurnTokens:
    waveform, sr = read_wav(turn.audio_path)
    mel = compute_mel(waveform, pre.mel_config)
    return TurnTokens(
        speaker_vector=speaker_embedding(waveform, sr, pre.mel_config).embedding,
        text_ids=tuple(pre.bpe.encode(turn.text)),
        codes=encode_semantic(mel, pre.codebook).codes,
        caption_ids=tuple(pre.bpe.encode(caption)) if caption else None,
    )


def _predicted_caption(model, history, turn_tok, pre, sampling) -> tuple[int, ...]:
    """Run the caption phase for a history turn against its own prefix."""
    prompt = build_sequence(history, turn_tok, pre.vocab, include_captions=True)
    ids, _stop = generate_caption(model, prompt, sampling)
    return ids


def cmd_synth(args: argparse.Namespace) -> int:
    manifest = _require_file(args.manifest, "manifest")
    workdir = Path(args.workdir)
    pp_dir = workdir / "preprocessors"
    if not (pp_dir / "bpe.json").exists():
        raise UsageError(f"no preprocessors under {pp_dir}; run train-emgpt first")
    pre = load_preprocessors(pp_dir)

    lm_path = _require_file(
        args.lm_checkpoint or workdir / "checkpoints" / "lm_stage2_final.pt",
        "dialogue LM checkpoint",
    )
    cfm_path = _require_file(
        args.cfm_checkpoint or workdir / "checkpoints" / "cfm_final.pt",
        "renderer checkpoint",
    )
    model, lm_meta, _ = load_lm_checkpoint(lm_path)
    if lm_meta["vocab_hash"] != pre.vocab.spec_hash():
        raise ValidationError("LM checkpoint vocabulary does not match the preprocessors")
    run_cfg = RunConfig().merged(**lm_meta["run_config"])
    use_captions = run_cfg.use_captions
    renderer, cfm_meta, _ = load_cfm_checkpoint(cfm_path)
    if cfm_meta["vocab_hash"] != pre.vocab.spec_hash():
        raise ValidationError("renderer checkpoint vocabulary does not match the preprocessors")

    sessions = load_corpus(manifest)
    session = next((s for s in sessions if s.session_id == args.session_id), None)
    if session is None:
        raise UsageError(f"session {args.session_id!r} not in manifest")
    if not 0 <= args.turn_index < len(session.turns):
        raise UsageError(
            f"turn index {args.turn_index} out of range for session "
            f"{args.session_id!r} with {len(session.turns)} turns"
        )
    target = session.turns[args.turn_index]
    if target.audio_path is None:
        raise ValidationError("target turn has no audio to derive speaker conditioning from")

    n_turns = args.n_turns if args.n_turns is not None else run_cfg.n_window
    sampling = run_cfg.sampling_config(seed=args.seed)

    # history turns: contiguous usable suffix of the preceding window
    history: list[TurnTokens] = []
    prompt_mel = None
    start = max(0, args.turn_index - (n_turns - 1))
    for j in range(start, args.turn_index):
        turn = session.turns[j]
        if turn.audio_path is None:
            history = []
            continue
        caption = turn.caption if use_captions else None
        tok = _turn_tokens(turn, pre, caption)
        if use_captions and tok.caption_ids is None:
            if args.history_captions == "predict":
                cap_ids = _predicted_caption(model, history, tok, pre, sampling)
                tok = dataclasses.replace(tok, caption_ids=cap_ids)
            else:
                log.warning("history turn %d has no caption; dropping older context", j)
                history = []
                continue
        history.append(tok)
        if turn.speaker_id == target.speaker_id:
            waveform, _sr = read_wav(turn.audio_path)
            prompt_mel = compute_mel(waveform, pre.mel_config)

    target_tok = _turn_tokens(target, pre, None)
    seq = build_sequence(history, target_tok, pre.vocab, include_captions=use_captions)
    if len(seq.ids) >= model.config.max_seq_len - 4:
        raise UsageError(
            f"context of {len(seq.ids)} tokens exceeds the model window "
            f"({model.config.max_seq_len}); try a smaller --n-turns"
        )

    out = chain_generate(model, seq, sampling)
    caption_text = pre.bpe.decode(list(out.caption_ids)) if out.caption_ids else ""
    print(f"caption stop: {out.caption_stop}")
    print(f"codes stop: {out.code_stop}")
    if not out.codes.codes:
        raise RuntimeError("the model produced no semantic codes; train it further")

    mel = synthesize(
        renderer,
        out.codes,
        caption_text,
        target_tok.speaker_vector,
        pre.mel_config,
        prompt_mel=prompt_mel,
        seed=args.seed,
    )

    out_dir = Path(args.out_dir) if args.out_dir else workdir / "synth"
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = out_dir / f"{args.session_id}_turn{args.turn_index:02d}"

    caption_path = Path(f"{prefix}.caption.txt")
    caption_path.write_text(caption_text + "\n", encoding="utf-8")
    codes_path = Path(f"{prefix}.codes.json")
    codes_path.write_text(
        json.dumps(
            {
                "codes": list(out.codes.codes),
                "frame_rate": out.codes.frame_rate,
                "caption_stop": out.caption_stop,
                "code_stop": out.code_stop,
            },
            sort_keys=True,
            indent=2,
        ),
        encoding="utf-8",
    )
    mel_path = Path(f"{prefix}.mel.f32")
    mel.frames.astype("<f4").tofile(mel_path)
    Path(f"{prefix}.mel.json").write_text(
        json.dumps(
            {
                "n_frames": mel.n_frames,
                "n_mels": mel.n_mels,
                "frame_rate": mel.frame_rate,
                "sample_rate": mel.sample_rate,
                "n_samples": mel.n_samples,
            },
            sort_keys=True,
            indent=2,
        ),
        encoding="utf-8",
    )
    artifacts = [caption_path, codes_path, mel_path]
    if args.wav:
        wav_path = Path(f"{prefix}.wav")
        waveform = mel_to_waveform(mel, pre.mel_config)
        write_wav(wav_path, waveform, pre.mel_config.sample_rate)
        artifacts.append(wav_path)
    for p in artifacts:
        print(f"wrote {p}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluation


def _load_pairs_file(path: Path) -> dict:
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "pairs" not in data:
        raise ValidationError(f"{path} must be a JSON object with a 'pairs' list")
    offenders = []
    for i, entry in enumerate(data["pairs"]):
        if not (isinstance(entry, (list, tuple)) and len(entry) == 2):
            offenders.append(f"pairs[{i}]: expected [reference, synthesized]")
            continue
        for side, p in zip(("reference", "synthesized"), entry):
            if not Path(p).exists():
                offenders.append(f"pairs[{i}]: {side} file missing: {p}")
    if offenders:
        raise ValidationError("unpaired or missing entries:\n  " + "\n  ".join(offenders))
    if not data["pairs"]:
        raise ValidationError("the pair list is empty")
    return data


def cmd_eval(args: argparse.Namespace) -> int:
    pairs_path = _require_file(args.pairs, "pairs file")
    data = _load_pairs_file(pairs_path)

    wave_pairs = []
    rates = set()
    for ref_path, syn_path in data["pairs"]:
        ref, sr_ref = read_wav(ref_path)
        syn, sr_syn = read_wav(syn_path)
        rates.update((sr_ref, sr_syn))
        wave_pairs.append((ref, syn))
    if len(rates) != 1:
        raise ValidationError(f"mixed sample rates in pair list: {sorted(rates)}")
    sample_rate = rates.pop()

    captions = data.get("captions")
    if not captions:
        raise ValidationError(
            "the pairs file needs a 'captions' list of [predicted, reference] "
            "pairs for dis1/dis2/sim"
        )
    preds = [c[0] for c in captions]
    refs = [c[1] for c in captions]

    per_pair_rows = []
    dtw_values = []
    for i, (ref, syn) in enumerate(wave_pairs):
        try:
            d = dtw_distance(pitch_for_dtw(ref, sample_rate), pitch_for_dtw(syn, sample_rate))
            dtw_values.append(d)
            d_text = f"{d:.6f}"
        except ValueError as exc:
            log.warning("pair %d skipped in DTW: %s", i, exc)
            d_text = ""
        try:
            s_text = f"{ssim_proxy([(ref, syn)], sample_rate):.6f}"
        except ValueError:
            s_text = ""  # already warned inside ssim_proxy
        per_pair_rows.append(
            [i, data["pairs"][i][0], data["pairs"][i][1], d_text, s_text]
        )
    if not dtw_values:
        raise ValidationError("every pair was skipped; no usable pitch contours")

    emotions = data.get("emotions")
    acc = accuracy([e[0] for e in emotions], [e[1] for e in emotions]) if emotions else None

    config_hash = ""
    if args.checkpoint:
        sidecar = Path(args.checkpoint).with_suffix(".json")
        _require_file(sidecar, "checkpoint sidecar")
        config_hash = json.loads(sidecar.read_text(encoding="utf-8")).get("config_hash", "")

    report = MetricReport(
        ddtw=float(np.mean(dtw_values)),
        dis1=distinct_n(preds, 1),
        dis2=distinct_n(preds, 2),
        sim=caption_similarity(preds, refs),
        ssim_proxy=ssim_proxy(wave_pairs, sample_rate),
        acc=acc,
        config_hash=config_hash,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    csv_path = Path(args.per_pair) if args.per_pair else out.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "reference", "synthesized", "dtw", "ssim_proxy"])
        writer.writerows(per_pair_rows)
    print(report.to_json())
    print(f"wrote {out}")
    print(f"wrote {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats


def cmd_stats(args: argparse.Namespace) -> int:
    manifest = _require_file(args.manifest, "manifest")
    sessions = load_corpus(manifest)
    stats = corpus_stats(sessions)
    print(stats.format_table())
    if args.json:
        Path(args.json).write_text(
            json.dumps(stats.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
        )
        print(f"wrote {args.json}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convotts",
        description="Conversational TTS with style captions: annotation, training, synthesis, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"convotts {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate", help="annotate a manifest with style captions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--llm", choices=("mock", "http"), default="mock")
    p.add_argument("--endpoint", help="HTTP endpoint for --llm http")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--thresholds", default="default", help="'default' or a JSON file")
    p.add_argument("--alignments", help="directory of <stem>.tsv phone alignments")
    p.add_argument("--log", help="caption record JSONL path")
    p.add_argument("--llm-verify", action="store_true", dest="llm_verify")
    p.set_defaults(func=cmd_annotate)

    def add_train_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--manifest", required=True)
        p.add_argument("--workdir", required=True)
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--split", default="0.8,0.1,0.1")
        p.add_argument("--resume-from", dest="resume_from")
        for name in _CONFIG_FLAGS:
            flag = "--" + name.replace("_", "-")
            kind = float if name in (
                "learning_rate", "caption_loss_weight", "dropout_rate"
            ) else int
            p.add_argument(flag, dest=name, type=kind, default=None)
        p.add_argument("--no-context", action="store_true", dest="no_context")
        p.add_argument("--no-captions", action="store_true", dest="no_captions")

    p = sub.add_parser("train-emgpt", help="train the chained caption/code model")
    add_train_common(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--init-from", dest="init_from")
    p.add_argument("--from-scratch", action="store_true", dest="from_scratch")
    p.set_defaults(func=cmd_train_emgpt)

    p = sub.add_parser("train-cfm", help="train the flow-matching mel renderer")
    add_train_common(p)
    p.set_defaults(func=cmd_train_cfm)

    p = sub.add_parser("synth", help="synthesize one agent reply")
    p.add_argument("--manifest", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--session-id", required=True, dest="session_id")
    p.add_argument("--turn-index", type=int, required=True, dest="turn_index")
    p.add_argument("--n-turns", type=int, default=None, dest="n_turns")
    p.add_argument(
        "--history-captions",
        choices=("corpus", "predict"),
        default="corpus",
        dest="history_captions",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--lm-checkpoint", dest="lm_checkpoint")
    p.add_argument("--cfm-checkpoint", dest="cfm_checkpoint")
    p.add_argument("--wav", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="objective metrics over paired outputs")
    p.add_argument("--pairs", required=True, help="JSON file: pairs/captions/emotions")
    p.add_argument("--out", required=True, help="MetricReport JSON path")
    p.add_argument("--per-pair", dest="per_pair", help="per-pair CSV path")
    p.add_argument("--checkpoint", help="checkpoint whose config hash goes in the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="corpus statistics table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--json", help="also write the stats as JSON")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return EXIT_OK if code in (0, None) else int(code)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, ValidationError, ParseError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LLMTransportError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
