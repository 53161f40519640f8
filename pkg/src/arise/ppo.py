"""Clipped-surrogate PPO on a single agent's buffer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import policy as pol
from .rollout import AgentBuffer, compute_gae, compute_returns, minibatches, normalize_advantages


@dataclass
class PPOConfig:
    clip_epsilon: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 3e-4
    max_grad_norm: float = 0.5

    def validate(self) -> None:
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0 <= self.gamma <= 1 or not 0 <= self.lam <= 1:
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.max_grad_norm <= 0:
            raise ValueError("learning_rate and max_grad_norm must be positive")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ValueError("loss coefficients must be non-negative")


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    n_samples: int


def _ratio(log_probs_new, log_probs_old) -> np.ndarray:
    ratio = np.exp(np.asarray(log_probs_new, dtype=np.float64) - np.asarray(log_probs_old, dtype=np.float64))
    if not np.all(np.isfinite(ratio)):
        raise nn.NumericError("non-finite probability ratio")
    return ratio


def surrogate_loss(log_probs_new, log_probs_old, advantages, epsilon) -> float:
    """Mean clipped surrogate; larger is better."""
    ratio = _ratio(log_probs_new, log_probs_old)
    adv = np.asarray(advantages, dtype=np.float64)
    return float(np.mean(np.minimum(ratio * adv, np.clip(ratio, 1 - epsilon, 1 + epsilon) * adv)))


def surrogate_grad_logp(log_probs_new, log_probs_old, advantages, epsilon) -> np.ndarray:
    """d(mean surrogate)/d(log_probs_new); zero where the clipped branch is the minimum."""
    ratio = _ratio(log_probs_new, log_probs_old)
    adv = np.asarray(advantages, dtype=np.float64)
    unclipped = ratio * adv <= np.clip(ratio, 1 - epsilon, 1 + epsilon) * adv
    return np.where(unclipped, ratio * adv, 0.0) / len(adv)


def value_loss(returns, values) -> float:
    diff = np.asarray(returns, dtype=np.float64) - np.asarray(values, dtype=np.float64)
    return float(np.mean(diff * diff))


def objective_and_grad(policy: pol.ActorCriticPolicy, states, actions, old_log_probs, advantages,
                       returns, config: PPOConfig):
    """Loss to minimise, -(surrogate + eta*H) + c_v*MSE, with its flat gradient.

    Also returns (surrogate, value mse, mean entropy, approx KL) for logging.
    """
    log_probs, entropies, values, cache = pol.evaluate(policy, states, actions, return_cache=True)
    n = len(log_probs)
    surr = surrogate_loss(log_probs, old_log_probs, advantages, config.clip_epsilon)
    vloss = value_loss(returns, values)
    ent = float(np.mean(entropies))
    loss = -surr - config.entropy_coef * ent + config.value_coef * vloss
    d_logp = -surrogate_grad_logp(log_probs, old_log_probs, advantages, config.clip_epsilon)
    d_ent = np.full(n, -config.entropy_coef / n)
    d_val = config.value_coef * (-2.0 / n) * (np.asarray(returns) - values)
    grad = pol.backprop(policy, cache, d_logp, d_ent, d_val)
    log_ratio = log_probs - np.asarray(old_log_probs)
    approx_kl = float(np.mean(np.expm1(log_ratio) - log_ratio))
    return loss, grad, (surr, vloss, ent, approx_kl)


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.sum(grad * grad)))
    if norm > max_norm:
        return grad * (max_norm / (norm + 1e-6))
    return grad


def apply_gradient(policy: pol.ActorCriticPolicy, actor_opt: nn.AdamState, critic_opt: nn.AdamState,
                   grad: np.ndarray) -> None:
    """Adam step on actor(+log_std) and critic separately, then clamp log_std."""
    na, nc = policy.actor.param_count, policy.critic.param_count
    flat = pol.get_flat(policy)
    actor_idx = np.r_[0:na, na + nc:flat.size]
    new = flat.copy()
    new[actor_idx] = nn.adam_step(actor_opt, flat[actor_idx], grad[actor_idx])
    new[na:na + nc] = nn.adam_step(critic_opt, flat[na:na + nc], grad[na:na + nc])
    pol.set_flat(policy, new)


def make_optimizers(policy: pol.ActorCriticPolicy, lr: float) -> tuple[nn.AdamState, nn.AdamState]:
    return (nn.AdamState(policy.actor.param_count + policy.log_std.size, learning_rate=lr),
            nn.AdamState(policy.critic.param_count, learning_rate=lr))


def update_agent(policy: pol.ActorCriticPolicy, optimizers, buffer: AgentBuffer, config: PPOConfig,
                 rng: np.random.Generator, clear: bool = True) -> UpdateStats:
    """Epochs of shuffled minibatch steps on this agent's own buffer.

    On a numeric failure the policy and optimizer states are restored and
    the ``NumericError`` propagates.
    """
    data = buffer.arrays()
    adv = compute_gae(buffer, config.gamma, config.lam)
    returns = compute_returns(adv, data["values"])
    actor_opt, critic_opt = optimizers
    snapshot = (pol.get_flat(policy), _opt_snapshot(actor_opt), _opt_snapshot(critic_opt))
    stats = []
    try:
        for _ in range(config.epochs):
            for idx in minibatches(len(buffer), config.batch_size, rng):
                loss, grad, info = objective_and_grad(
                    policy, data["states"][idx], data["actions"][idx], data["log_probs"][idx],
                    normalize_advantages(adv[idx]), returns[idx], config)
                if not np.isfinite(loss):
                    raise nn.NumericError("non-finite PPO loss")
                apply_gradient(policy, actor_opt, critic_opt, clip_grad_norm(grad, config.max_grad_norm))
                stats.append(info)
    except nn.NumericError:
        pol.set_flat(policy, snapshot[0])
        _opt_restore(actor_opt, snapshot[1])
        _opt_restore(critic_opt, snapshot[2])
        raise
    if clear:
        buffer.clear()
    s = np.array(stats)
    return UpdateStats(policy_loss=float(-s[:, 0].mean()), value_loss=float(s[:, 1].mean()),
                       entropy=float(s[:, 2].mean()), approx_kl=float(s[-1, 3]), n_samples=len(adv))


def _opt_snapshot(opt: nn.AdamState):
    return opt.step_count, opt.first_moment.copy(), opt.second_moment.copy()


def _opt_restore(opt: nn.AdamState, snap) -> None:
    opt.step_count, opt.first_moment, opt.second_moment = snap[0], snap[1].copy(), snap[2].copy()
