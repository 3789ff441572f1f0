#!/usr/bin/env python
"""Generate the synthetic dialogue corpus used by tests and the demo pipeline."""

import argparse
from pathlib import Path

from convotts.toydata import make_toy_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", type=Path, default=Path("toy_corpus"))
    parser.add_argument("--sessions", type=int, default=8)
    parser.add_argument("--sample-rate", type=int, default=22050)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    manifest = make_toy_corpus(
        args.root, n_sessions=args.sessions, sample_rate=args.sample_rate, seed=args.seed
    )
    print(f"wrote {manifest}")


if __name__ == "__main__":
    main()
