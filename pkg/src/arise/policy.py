"""Actor-critic policies: categorical head for discrete actions, diagonal Gaussian for continuous."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class InvalidActionError(ValueError):
    pass


@dataclass
class ActionSpec:
    kind: str  # "discrete" | "continuous"
    dim: int
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.dim <= 0:
            raise ValueError("action dim must be positive")
        if self.kind == "continuous":
            self.low = np.broadcast_to(np.asarray(self.low, dtype=np.float64), (self.dim,)).copy()
            self.high = np.broadcast_to(np.asarray(self.high, dtype=np.float64), (self.dim,)).copy()
            if not np.all(self.low < self.high):
                raise ValueError("action bounds must satisfy low < high")

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if not self.discrete:
            d["low"] = self.low.tolist()
            d["high"] = self.high.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpec":
        return cls(d["kind"], d["dim"], d.get("low"), d.get("high"))


@dataclass
class ActorCriticPolicy:
    actor: nn.DenseNet
    critic: nn.DenseNet
    action_spec: ActionSpec
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def param_count(self) -> int:
        return self.actor.param_count + self.critic.param_count + self.log_std.size

    def copy(self) -> "ActorCriticPolicy":
        return ActorCriticPolicy(self.actor.copy(), self.critic.copy(), self.action_spec, self.log_std.copy())


def make_policy(obs_dim: int, action_spec: ActionSpec, hidden=(64, 64), seed=0) -> ActorCriticPolicy:
    """Two tanh MLPs; gains sqrt(2) on hidden layers, 0.01 on the actor head, 1 on the critic head."""
    rng = np.random.default_rng(seed)
    n_hidden = len(hidden)
    hidden_gains = [math.sqrt(2.0)] * n_hidden
    actor = nn.init_orthogonal([obs_dim, *hidden, action_spec.dim], hidden_gains + [0.01], rng)
    critic = nn.init_orthogonal([obs_dim, *hidden, 1], hidden_gains + [1.0], rng)
    log_std = np.zeros(0 if action_spec.discrete else action_spec.dim)
    return ActorCriticPolicy(actor, critic, action_spec, log_std)


def get_flat(policy: ActorCriticPolicy) -> np.ndarray:
    return np.concatenate([nn.get_flat(policy.actor), nn.get_flat(policy.critic), policy.log_std])


def set_flat(policy: ActorCriticPolicy, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (policy.param_count,):
        raise ValueError(f"expected {policy.param_count} values, got {values.shape}")
    na, nc = policy.actor.param_count, policy.critic.param_count
    nn.set_flat(policy.actor, values[:na])
    nn.set_flat(policy.critic, values[na:na + nc])
    policy.log_std = np.clip(values[na + nc:], LOG_STD_MIN, LOG_STD_MAX).copy()


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def distribution(policy: ActorCriticPolicy, state) -> dict:
    """Action distribution at one state: ``probs`` (discrete) or ``mean``/``std``."""
    out = nn.forward(policy.actor, state)
    if policy.action_spec.discrete:
        return {"probs": np.exp(_log_softmax(out))}
    return {"mean": out, "std": np.exp(policy.log_std)}


def act(policy: ActorCriticPolicy, state, rng: np.random.Generator):
    """Sample an action. Returns ``(action, log_prob, value)``."""
    state = np.asarray(state, dtype=np.float64)
    if not np.all(np.isfinite(state)):
        raise nn.NumericError("non-finite state")
    out = nn.forward(policy.actor, state)
    value = float(nn.forward(policy.critic, state)[0])
    if policy.action_spec.discrete:
        logp = _log_softmax(out)
        cdf = np.cumsum(np.exp(logp))
        a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        a = min(a, len(cdf) - 1)
        return a, float(logp[a]), value
    std = np.exp(policy.log_std)
    a = out + std * rng.standard_normal(out.shape)
    return a, float(gaussian_log_prob(a, out, policy.log_std)), value


def greedy_action(policy: ActorCriticPolicy, state):
    out = nn.forward(policy.actor, np.asarray(state, dtype=np.float64))
    if policy.action_spec.discrete:
        return int(np.argmax(out))
    return out


def value(policy: ActorCriticPolicy, state) -> float:
    return float(nn.forward(policy.critic, np.asarray(state, dtype=np.float64))[0])


def gaussian_log_prob(a, mean, log_std):
    z = (a - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def evaluate(policy: ActorCriticPolicy, states, actions, return_cache: bool = False):
    """Batch log-probs of ``actions``, entropies and critic values.

    With ``return_cache`` a fourth element carries what ``backprop`` needs.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    out, actor_cache = nn.forward(policy.actor, states, return_cache=True)
    v, critic_cache = nn.forward(policy.critic, states, return_cache=True)
    values = v[:, 0]
    cache = {"states": states, "actor_cache": actor_cache, "critic_cache": critic_cache}
    if policy.action_spec.discrete:
        actions = np.asarray(actions).astype(np.int64).reshape(-1)
        n = policy.action_spec.dim
        if np.any(actions < 0) or np.any(actions >= n):
            raise InvalidActionError(f"action index outside [0, {n})")
        logp_all = _log_softmax(out)
        probs = np.exp(logp_all)
        log_probs = logp_all[np.arange(len(actions)), actions]
        entropies = -np.sum(probs * logp_all, axis=-1)
        cache.update(actions=actions, probs=probs, logp_all=logp_all, entropies=entropies)
    else:
        actions = np.asarray(actions, dtype=np.float64).reshape(len(states), -1)
        log_probs = gaussian_log_prob(actions, out, policy.log_std)
        ent = float(np.sum(0.5 + _HALF_LOG_2PI + policy.log_std))
        entropies = np.full(len(states), ent)
        cache.update(actions=actions, mean=out)
    if return_cache:
        return log_probs, entropies, values, cache
    return log_probs, entropies, values


def backprop(policy: ActorCriticPolicy, cache: dict, d_logp, d_entropy, d_value) -> np.ndarray:
    """Flat gradient (``get_flat`` layout) of sum(d_logp*logp + d_entropy*H + d_value*V)."""
    d_logp = np.asarray(d_logp, dtype=np.float64)
    d_entropy = np.asarray(d_entropy, dtype=np.float64)
    d_value = np.asarray(d_value, dtype=np.float64)
    states = cache["states"]
    g_log_std = np.zeros(policy.log_std.size)
    if policy.action_spec.discrete:
        probs, logp_all, ent = cache["probs"], cache["logp_all"], cache["entropies"]
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(probs)), cache["actions"]] = 1.0
        # d logp_a / dz = onehot - p ; dH/dz_k = -p_k (log p_k + H)
        d_out = d_logp[:, None] * (onehot - probs)
        d_out += d_entropy[:, None] * (-probs * (logp_all + ent[:, None]))
    else:
        inv_var = np.exp(-2.0 * policy.log_std)
        diff = cache["actions"] - cache["mean"]
        d_out = d_logp[:, None] * diff * inv_var
        g_log_std = np.sum(d_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0) + np.sum(d_entropy)
    g_actor = nn.backward(policy.actor, states, d_out, cache["actor_cache"])
    g_critic = nn.backward(policy.critic, states, d_value[:, None], cache["critic_cache"])
    return np.concatenate([g_actor, g_critic, g_log_std])


# -- checkpoint fragment: one header, then actor | critic | log_std --

def save_policy(policy: ActorCriticPolicy, path) -> None:
    header = {
        "actor": {"layer_dims": policy.actor.layer_dims, "param_count": policy.actor.param_count},
        "critic": {"layer_dims": policy.critic.layer_dims, "param_count": policy.critic.param_count},
        "log_std": int(policy.log_std.size),
        "action_spec": policy.action_spec.to_dict(),
    }
    with open(path, "wb") as fh:
        nn.write_fragment(fh, header, [get_flat(policy)])


def load_policy(path) -> ActorCriticPolicy:
    with open(path, "rb") as fh:
        header, data = nn.read_fragment(fh)
    spec = ActionSpec.from_dict(header["action_spec"])
    actor = nn.init_orthogonal(header["actor"]["layer_dims"], 1.0, 0)
    critic = nn.init_orthogonal(header["critic"]["layer_dims"], 1.0, 0)
    policy = ActorCriticPolicy(actor, critic, spec, np.zeros(header["log_std"]))
    if data.size != policy.param_count:
        raise ValueError("policy fragment length does not match header")
    set_flat(policy, data)
    return policy

