#!/usr/bin/env python3
"""Generate a synthetic two-family SPD corpus as Matrix Market files."""

import argparse

from pcselect import synth


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="corpus", help="output directory")
    parser.add_argument("--count", type=int, default=60)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    written = synth.generate_corpus(args.out, count=args.count, seed=args.seed)
    for matrix_id, path in written:
        print(f"{matrix_id} -> {path}")
    print(f"{len(written)} matrices in {args.out}")


if __name__ == "__main__":
    main()
