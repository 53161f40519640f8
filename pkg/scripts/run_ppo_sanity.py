#!/usr/bin/env python3
"""Episodes the plain PPO variant needs for a 100-episode mean return of 195 on CartPole."""
import argparse
import time

from arise.experiments import ppo_sanity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--max-episodes", type=int, default=1000)
    args = ap.parse_args()
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        r = ppo_sanity(seed, args.max_episodes)
        status = f"solved at episode {r.episodes}" if r.solved else f"not solved (best mean {r.best_rolling_mean:.1f})"
        print(f"seed {seed}: {status}  [{time.perf_counter() - t0:.1f}s]")


if __name__ == "__main__":
    main()
