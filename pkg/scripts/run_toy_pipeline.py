#!/usr/bin/env python
"""End-to-end demo: annotate -> two-stage LM training -> renderer -> synth -> eval.

Everything runs on the synthetic corpus with the mock LLM, so the whole
pipeline is deterministic and finishes in a few minutes on one CPU core.
"""

import argparse
import json
import sys
from pathlib import Path

from convotts.cli import main as cli
from convotts.toydata import make_toy_corpus


def run(argv: list[str]) -> None:
    print("+ convotts " + " ".join(argv))
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", type=Path, default=Path("toy_run"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stage1-steps", type=int, default=200)
    parser.add_argument("--stage2-steps", type=int, default=300)
    parser.add_argument("--cfm-steps", type=int, default=300)
    args = parser.parse_args()

    workdir = args.workdir
    corpus_root = workdir / "corpus"
    manifest = make_toy_corpus(corpus_root, seed=args.seed)
    annotated = workdir / "annotated.jsonl"

    run(["annotate", "--manifest", str(manifest), "--out", str(annotated),
         "--llm", "mock", "--seed", str(args.seed)])
    run(["stats", "--manifest", str(annotated)])

    common = ["--manifest", str(annotated), "--workdir", str(workdir),
              "--seed", str(args.seed), "--split", "1,0,0",
              "--bpe-vocab-size", "280", "--code-vocab-size", "16",
              "--batch-size", "4", "--model-dim", "96"]
    run(["train-emgpt", "--stage", "1", "--max-steps", str(args.stage1_steps)] + common)
    run(["train-emgpt", "--stage", "2", "--max-steps", str(args.stage2_steps)] + common)
    run(["train-cfm", "--max-steps", str(args.cfm_steps)] + common)

    sessions = [json.loads(line) for line in open(annotated, encoding="utf-8")]
    session_id = sessions[0]["session_id"]
    run(["synth", "--manifest", str(annotated), "--workdir", str(workdir),
         "--session-id", session_id, "--turn-index", "1", "--seed", str(args.seed),
         "--wav"])

    # pair the synthesized turn with its ground-truth recording
    turn_rec = None
    for rec in sessions:
        if rec["session_id"] == session_id:
            turn_rec = rec["turns"][1]
    ref_wav = str((workdir / turn_rec["audio"]).resolve())
    syn_dir = workdir / "synth"
    caption = (syn_dir / f"{session_id}_turn01.caption.txt").read_text().strip()
    # The ref/ref pair keeps pitch DTW alive when the renderer is undertrained
    # (its output can be unvoiced at tiny step counts, and unvoiced pairs are skipped).
    pairs = {
        "pairs": [
            [ref_wav, str(syn_dir / f"{session_id}_turn01.wav")],
            [ref_wav, ref_wav],
        ],
        "captions": [[caption, turn_rec.get("caption", "")]],
        "emotions": [[turn_rec.get("emotion", "Neutral"), turn_rec.get("emotion", "Neutral")]],
    }
    pairs_path = workdir / "eval_pairs.json"
    pairs_path.write_text(json.dumps(pairs, indent=2), encoding="utf-8")
    run(["eval", "--pairs", str(pairs_path), "--out", str(workdir / "report.json"),
         "--checkpoint", str(workdir / "checkpoints" / "lm_stage2_final.pt")])
    print("pipeline complete")


if __name__ == "__main__":
    main()
