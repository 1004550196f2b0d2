#!/usr/bin/env python3
"""End-to-end desk-scale experiment on a synthetic corpus.

Chains the pipeline stages through the pcselect CLI: generate corpus,
compute features, encode images, time-and-label, then run the repeated
split evaluation comparing the image classifier against the benchmark.
"""

import argparse
import sys
from pathlib import Path

from pcselect import cli, synth


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="desk_experiment")
    parser.add_argument("--count", type=int, default=60)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--m", type=int, default=32)
    parser.add_argument("--time-limit", type=float, default=5.0)
    parser.add_argument("--repetitions", type=int, default=10)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument(
        "--models", default=None,
        help="model specs for eval (default: benchmark,cnn_<m>)",
    )
    args = parser.parse_args()

    work = Path(args.workdir)
    corpus = work / "corpus"
    if not corpus.exists():
        synth.generate_corpus(corpus, count=args.count, seed=args.seed)
        print(f"generated {args.count} matrices in {corpus}")

    models = args.models or f"benchmark,cnn_{args.m}"
    seed = str(args.seed)
    stages = [
        ["features", "--corpus", str(corpus), "--out", str(work / "features.csv")],
        ["encode", "--corpus", str(corpus), "--m", str(args.m),
         "--out", str(work / "images")],
        ["label", "--corpus", str(corpus), "--out", str(work / "labels.jsonl"),
         "--time-limit", str(args.time_limit), "--seed", seed],
        ["eval", "--features", str(work / "features.csv"),
         "--labels", str(work / "labels.jsonl"), "--images", str(work / "images"),
         "--models", models, "--repetitions", str(args.repetitions),
         "--epochs", str(args.epochs), "--out", str(work / "report"),
         "--seed", seed],
    ]
    for stage in stages:
        print(f"\n$ pcselect {' '.join(stage)}")
        rc = cli.main(stage)
        if rc != 0:
            print(f"stage failed with exit code {rc}", file=sys.stderr)
            return rc
    print(f"\nreport written under {work / 'report'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
