#!/usr/bin/env python3
"""Reward-shift adaptation on CartPole (center-penalty-v1 at the halfway episode).

Recovery is the number of episodes after the shift until a greedy evaluation
regains 90% of the last evaluation before it.
"""
import argparse

import numpy as np

from arise.experiments import nonstationary_recovery


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", default="arise,ppo")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--shift-episode", type=int, default=500)
    ap.add_argument("--eval-interval", type=int, default=20)
    ap.add_argument("--verbose", action="store_true", help="print every evaluation")
    args = ap.parse_args()
    for v in args.variants.split(","):
        recs = []
        for seed in range(args.seeds):
            rec, evals = nonstationary_recovery(v, seed, args.shift_episode, args.eval_interval)
            recs.append(rec)
            if args.verbose:
                trace = [(e["episodes_done"], round(e["eval_return"], 1), e["shift_active"]) for e in evals]
                print(f"  {v} seed {seed}: recovery {rec}  {trace}")
        print(f"{v:<12} median recovery {np.median(recs)}  per seed {recs}")


if __name__ == "__main__":
    main()
