"""Novelty bonus, reward augmentation and swarm fitness."""
from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)

_BELOW_ONE = math.nextafter(1.0, 0.0)


def embed_action(action, spec) -> np.ndarray:
    """Map an executed action into particle space (one-hot for discrete)."""
    if spec.discrete:
        e = np.zeros(spec.dim)
        e[int(action)] = 1.0
        return e
    return np.asarray(action, dtype=np.float64).reshape(spec.dim)


def novelty_bonus(embedding, particle_positions, self_index: int | None) -> float:
    """tanh of the distance from ``embedding`` to the nearest other particle."""
    pos = np.asarray(particle_positions, dtype=np.float64)
    if pos.ndim == 1:
        pos = pos[:, None]
    if self_index is not None:
        pos = np.delete(pos, self_index, axis=0)
    if len(pos) == 0:
        log.warning("novelty requested with no other particles; returning 0")
        return 0.0
    d = np.sqrt(np.sum((pos - np.asarray(embedding, dtype=np.float64)) ** 2, axis=1))
    # tanh rounds to 1.0 beyond ~19; keep the bonus strictly below 1
    return min(math.tanh(float(d.min())), _BELOW_ONE)


def augment_reward(reward: float, novelty: float, beta: float) -> float:
    return reward + beta * novelty


def fitness(mean_reward: float, mean_novelty: float, empty: bool = False) -> float:
    if empty:
        return -math.inf
    return mean_reward + mean_novelty
