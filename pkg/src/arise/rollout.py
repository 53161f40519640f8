"""Per-agent trajectory buffers and generalized advantage estimation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EmptyBufferError(ValueError):
    pass


@dataclass
class Transition:
    state: np.ndarray
    action: object  # int index or float vector
    reward_env: float
    reward_aug: float
    done: bool
    log_prob: float
    value: float
    agent_id: int
    novelty: float = 0.0


@dataclass
class AgentBuffer:
    capacity: int
    transitions: list[Transition] = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self) -> int:
        return len(self.transitions)

    def add(self, tr: Transition) -> None:
        if len(self.transitions) >= self.capacity:
            raise OverflowError("buffer already holds a full horizon")
        self.transitions.append(tr)

    def clear(self) -> None:
        self.transitions.clear()
        self.bootstrap_value = 0.0

    def arrays(self) -> dict:
        trs = self.transitions
        return {
            "states": np.array([t.state for t in trs], dtype=np.float64),
            "actions": np.array([t.action for t in trs]),
            "reward_env": np.array([t.reward_env for t in trs], dtype=np.float64),
            "reward_aug": np.array([t.reward_aug for t in trs], dtype=np.float64),
            "dones": np.array([t.done for t in trs], dtype=bool),
            "log_probs": np.array([t.log_prob for t in trs], dtype=np.float64),
            "values": np.array([t.value for t in trs], dtype=np.float64),
            "novelty": np.array([t.novelty for t in trs], dtype=np.float64),
        }


def gae(rewards, values, dones, bootstrap_value, gamma, lam) -> np.ndarray:
    """Backward GAE recursion over one agent's contiguous steps.

    ``dones[t]`` marks that step t ended its episode, so nothing after it is
    credited back. ``bootstrap_value`` is V of the state following the last
    step and only matters when that step is not done.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if n == 0:
        raise EmptyBufferError("cannot compute advantages of an empty buffer")
    adv = np.zeros(n)
    next_value, next_adv = float(bootstrap_value), 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * live * next_value - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv


def compute_gae(buffer: AgentBuffer, gamma: float, lam: float) -> np.ndarray:
    if len(buffer) == 0:
        raise EmptyBufferError("cannot compute advantages of an empty buffer")
    trs = buffer.transitions
    return gae([t.reward_aug for t in trs], [t.value for t in trs], [t.done for t in trs],
               buffer.bootstrap_value, gamma, lam)


def compute_returns(advantages, values) -> np.ndarray:
    advantages = np.asarray(advantages, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if advantages.shape != values.shape:
        raise ValueError(f"length mismatch: {advantages.shape} vs {values.shape}")
    return advantages + values


def normalize_advantages(adv, eps: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + eps)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches covering ``range(n)`` exactly once."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
