#!/usr/bin/env python3
"""Reference runs behind the regression thresholds: the easy preset over five
seeds, and the hard-preset loss comparison / hierarchy ablation medians.

Writes one JSON summary per experiment. These are the numbers the acceptance
thresholds were frozen against.
"""

import argparse
import json
import os
import time
from dataclasses import replace

import numpy as np

from apranking.trainer import LossWeights, easy_preset, hard_preset, train

SEEDS = (0, 1, 2, 3, 4)


def run_easy(out_dir: str) -> dict:
    rows = []
    for seed in SEEDS:
        result = train(easy_preset(seed=seed))
        rows.append(
            {
                "seed": seed,
                "initial_map": result.initial_report.map,
                "initial_micro_ap": result.initial_report.micro_ap,
                "map": result.final_report.map,
                "micro_ap": result.final_report.micro_ap,
            }
        )
        print(f"easy seed {seed}: mAP={rows[-1]['map']:.4f} microAP={rows[-1]['micro_ap']:.4f}")
    summary = {
        "preset": "easy",
        "seeds": list(SEEDS),
        "runs": rows,
        "median_map": float(np.median([r["map"] for r in rows])),
        "median_micro_ap": float(np.median([r["micro_ap"] for r in rows])),
        "median_initial_map": float(np.median([r["initial_map"] for r in rows])),
    }
    with open(os.path.join(out_dir, "easy_reference.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def run_hard(out_dir: str) -> dict:
    variants = {
        "base": dict(video_loss="quadlinear", lambda_v=0.0, lambda_f=0.0),
        "quadlinear": dict(video_loss="quadlinear", lambda_f=0.0),
        "smooth": dict(video_loss="smooth", lambda_f=0.0),
        "triplet": dict(video_loss="triplet", lambda_f=0.0),
        "full": dict(video_loss="quadlinear"),
    }
    table = {}
    for tag, spec in variants.items():
        rows = []
        for seed in SEEDS:
            cfg = hard_preset(seed=seed)
            weights = cfg.weights
            for key in ("lambda_v", "lambda_f"):
                if key in spec:
                    weights = replace(weights, **{key: spec[key]})
            cfg = replace(cfg, video_loss=spec["video_loss"], weights=weights)
            result = train(cfg)
            rows.append({"seed": seed, "map": result.final_report.map,
                         "micro_ap": result.final_report.micro_ap})
            print(f"hard {tag} seed {seed}: mAP={rows[-1]['map']:.4f} "
                  f"microAP={rows[-1]['micro_ap']:.4f}")
        table[tag] = {
            "runs": rows,
            "median_map": float(np.median([r["map"] for r in rows])),
            "median_micro_ap": float(np.median([r["micro_ap"] for r in rows])),
        }
    with open(os.path.join(out_dir, "hard_reference.json"), "w") as fh:
        json.dump({"preset": "hard", "seeds": list(SEEDS), "variants": table}, fh,
                  indent=2, sort_keys=True)
    return table


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="reports")
    parser.add_argument("--skip-hard", action="store_true")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    started = time.time()
    easy = run_easy(args.out)
    print(f"easy medians: mAP={easy['median_map']:.4f} microAP={easy['median_micro_ap']:.4f}")
    if not args.skip_hard:
        hard = run_hard(args.out)
        for tag, row in hard.items():
            print(f"hard {tag}: median mAP={row['median_map']:.4f} "
                  f"median microAP={row['median_micro_ap']:.4f}")
    print(f"total {time.time() - started:.0f}s")


if __name__ == "__main__":
    main()
