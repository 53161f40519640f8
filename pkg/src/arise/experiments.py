"""Desk-scale experiment procedures shared by the acceptance suite and scripts/.

Each function trains fresh runs on the native CartPole and returns plain
numbers, so callers decide how to report or assert on them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import apply_variant
from .orchestrator import Arise, AriseConfig, run_training
from .ppo import PPOConfig


@dataclass
class SanityResult:
    seed: int
    solved: bool
    episodes: int  # episode index at which the rolling mean first reached the threshold, or episodes run
    best_rolling_mean: float


def ppo_sanity(seed: int, max_episodes: int = 1000, window: int = 100, threshold: float = 195.0,
               config: AriseConfig | None = None, ppo_config: PPOConfig | None = None) -> SanityResult:
    """Train the ``ppo`` variant until a ``window``-episode mean raw return reaches ``threshold``."""
    base = config or AriseConfig(total_iterations=10**6, eval_interval=10**9)
    cfg = replace(apply_variant(base, "ppo"), seed=seed, max_episodes=max_episodes)
    trainer = Arise(cfg, ppo_config, "cartpole", variant="ppo")
    best = -math.inf
    checked = window - 1
    while not trainer.finished():
        trainer.train_iteration()
        returns = np.asarray(trainer.episode_returns[:max_episodes])
        if returns.size < window:
            continue
        csum = np.concatenate([[0.0], np.cumsum(returns)])
        means = (csum[window:] - csum[:-window]) / window  # means[k] covers episodes k..k+window-1
        best = max(best, float(means.max()))
        hits = np.nonzero(means[checked - window + 1:] >= threshold)[0]
        if hits.size:
            return SanityResult(seed, True, int(checked + 1 + hits[0]), best)
        checked = returns.size - 1
    return SanityResult(seed, False, len(trainer.episode_returns), best)


def ablation_final_evals(variants, seeds, iterations: int = 30, env_id: str = "cartpole",
                         config: AriseConfig | None = None,
                         ppo_config: PPOConfig | None = None) -> dict[str, list[float]]:
    """Final greedy evaluation return per seed for each variant."""
    base = config or AriseConfig()
    out: dict[str, list[float]] = {}
    for v in variants:
        out[v] = []
        for seed in seeds:
            cfg = replace(apply_variant(base, v), seed=seed, total_iterations=iterations)
            out[v].append(run_training(cfg, ppo_config, env_id, variant=v).final_eval)
    return out


def recovery_episodes(evals: list[dict], shift_episode: int, frac: float = 0.9) -> float:
    """Episodes after the shift until an evaluation regains ``frac`` of the last pre-shift one.

    Returns ``inf`` when there is no pre-shift reference or the run never recovers.
    """
    pre = [e for e in evals if e["shift_active"] is False]
    post = [e for e in evals if e["shift_active"]]
    if not pre:
        return math.inf
    ref = pre[-1]["eval_return"]
    target = frac * ref if ref >= 0 else ref / frac
    for e in post:
        if e["eval_return"] >= target:
            return float(max(e["episodes_done"] - shift_episode, 0))
    return math.inf


def nonstationary_recovery(variant: str, seed: int, shift_episode: int = 500, eval_interval: int = 20,
                           config: AriseConfig | None = None,
                           ppo_config: PPOConfig | None = None) -> tuple[float, list[dict]]:
    """Train on a CartPole whose reward shifts at the halfway episode; return (recovery, evals).

    The run has a budget of twice ``shift_episode`` episodes and stops early
    once recovery has been observed, which does not change the measurement.
    """
    base = config or AriseConfig(total_iterations=400)
    cfg = replace(apply_variant(base, variant), seed=seed, max_episodes=2 * shift_episode,
                  eval_interval=eval_interval)
    env_id = f"cartpole+shift:center-penalty-v1:{shift_episode}"
    trainer = Arise(cfg, ppo_config, env_id, variant=variant)
    recovery = math.inf
    while not trainer.finished():
        trainer.train_iteration()
        recovery = recovery_episodes(trainer.evals, shift_episode)
        if recovery < math.inf:
            break
    return recovery, list(trainer.evals)
