#!/usr/bin/env python3
"""Ablation table on CartPole: final greedy evaluation return per variant over seeds."""
import argparse
import json

import numpy as np

from arise.config import VARIANTS
from arise.experiments import ablation_final_evals


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", default="arise,arise_no_swarm,arise_no_adaptive,arise_no_novelty,arise_no_broadcast,ppo")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=60)
    ap.add_argument("--env", default="cartpole")
    ap.add_argument("--json", help="also write the raw numbers here")
    args = ap.parse_args()
    variants = [v for v in args.variants.split(",") if v]
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        ap.error(f"unknown variants: {sorted(unknown)}")
    res = ablation_final_evals(variants, range(args.seeds), args.iterations, args.env)
    print(f"{'variant':<22}{'mean':>10}{'std':>10}  per seed")
    for v, vals in res.items():
        print(f"{v:<22}{np.mean(vals):>10.2f}{np.std(vals):>10.2f}  {[round(x, 1) for x in vals]}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=1)


if __name__ == "__main__":
    main()
