#!/usr/bin/env python3
"""Regenerate the surrogate-loss gap-sweep CSVs (value and derivative of each
per-pair penalty) plus the gradient-vanishing contrast report."""

import argparse
import sys

from apranking.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="apranking-out")
    parser.add_argument("--delta", type=float, default=0.05)
    parser.add_argument("--tau", type=float, default=0.01)
    args = parser.parse_args()
    return cli_main(
        [
            "bench-loss",
            "--losses", "quadlinear,smooth,heaviside,triplet,contrastive",
            "--delta", str(args.delta),
            "--tau", str(args.tau),
            "--deterministic",
            "--out", args.out,
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
