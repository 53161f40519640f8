import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arise import nn, policy as pol
from arise.ppo import (PPOConfig, make_optimizers, objective_and_grad, surrogate_grad_logp, surrogate_loss,
                       update_agent, value_loss)
from arise.rollout import AgentBuffer, Transition
from oracles import central_diff, max_rel_err


def test_surrogate_ratio_one_is_mean_advantage():
    adv = np.array([0.5, -1.0, 2.0])
    lp = np.array([-0.3, -1.2, -0.7])
    assert surrogate_loss(lp, lp, adv, 0.2) == pytest.approx(adv.mean(), abs=1e-15)


def test_surrogate_clip_branches():
    assert surrogate_loss([np.log(1.5)], [0.0], [1.0], 0.2) == pytest.approx(1.2)
    # rho=0.5, A=-1: unclipped -0.5, clipped -0.8, min picks -0.8
    assert surrogate_loss([np.log(0.5)], [0.0], [-1.0], 0.2) == pytest.approx(-0.8)


@pytest.mark.filterwarnings("ignore:overflow")
def test_surrogate_nonfinite_ratio():
    with pytest.raises(nn.NumericError):
        surrogate_loss([1000.0], [0.0], [1.0], 0.2)


def test_value_loss_examples():
    assert value_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert value_loss([1.0, 3.0], [0.0, 0.0]) == 5.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_value_loss_non_negative(r):
    assert value_loss(r, np.zeros(len(r))) >= 0


def _random_batch(spec, rng, n=8, obs_dim=3):
    states = rng.normal(size=(n, obs_dim))
    actions = rng.integers(0, spec.dim, size=n) if spec.discrete else rng.normal(size=(n, spec.dim))
    return states, actions


@pytest.mark.parametrize("discrete", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_combined_objective_gradient(discrete, seed):
    rng = np.random.default_rng(seed)
    spec = pol.ActionSpec("discrete", 3) if discrete else pol.ActionSpec("continuous", 2, -1, 1)
    p = pol.make_policy(3, spec, hidden=(6, 5), seed=seed)
    pol.set_flat(p, pol.get_flat(p) + 0.2 * rng.normal(size=p.param_count))
    states, actions = _random_batch(spec, rng)
    old = pol.evaluate(p, states, actions)[0] + rng.normal(scale=0.3, size=8)
    adv, ret = rng.normal(size=8), rng.normal(size=8)
    cfg = PPOConfig(clip_epsilon=0.2, entropy_coef=0.05, value_coef=0.5)
    _, grad, _ = objective_and_grad(p, states, actions, old, adv, ret, cfg)

    def f(theta):
        q = p.copy()
        pol.set_flat(q, theta)
        return objective_and_grad(q, states, actions, old, adv, ret, cfg)[0]

    assert max_rel_err(grad, central_diff(f, pol.get_flat(p))) < 1e-5


def test_unbounded_clip_equals_vanilla_policy_gradient():
    rng = np.random.default_rng(0)
    spec = pol.ActionSpec("discrete", 3)
    p = pol.make_policy(3, spec, hidden=(6,), seed=0)
    states, actions = _random_batch(spec, rng, n=16)
    lp, _, _, cache = pol.evaluate(p, states, actions, return_cache=True)
    adv = rng.normal(size=16)
    d = surrogate_grad_logp(lp, lp, adv, 1e12)
    g_ppo = pol.backprop(p, cache, d, np.zeros(16), np.zeros(16))
    g_pg = pol.backprop(p, cache, adv / 16, np.zeros(16), np.zeros(16))
    assert np.max(np.abs(g_ppo - g_pg)) < 1e-9


def _bandit_buffer(p, rewards_by_action, n=64, seed=0):
    rng = np.random.default_rng(seed)
    buf = AgentBuffer(n)
    s = np.array([1.0, 0.0])
    for _ in range(n):
        a, lp, v = pol.act(p, s, rng)
        r = rewards_by_action[a]
        buf.add(Transition(s, a, r, r, True, lp, v, 0))
    return buf


def test_positive_advantage_action_gains_probability():
    p = pol.make_policy(2, pol.ActionSpec("discrete", 2), seed=0)
    s = np.array([1.0, 0.0])
    before = np.log(pol.distribution(p, s)["probs"][0])
    buf = _bandit_buffer(p, {0: 1.0, 1: 0.0})
    cfg = PPOConfig(epochs=1, batch_size=64, learning_rate=1e-4, entropy_coef=0.0)
    update_agent(p, make_optimizers(p, cfg.learning_rate), buf, cfg, np.random.default_rng(0))
    assert np.log(pol.distribution(p, s)["probs"][0]) >= before


def test_zero_advantage_moves_only_through_entropy():
    p = pol.make_policy(2, pol.ActionSpec("discrete", 2), seed=1)
    # constant critic so stored and recomputed values agree bit for bit
    p.critic.weights[-1][:] = 0.0
    p.critic.biases[-1][:] = 0.5
    rng = np.random.default_rng(0)
    buf = AgentBuffer(32)
    for _ in range(32):
        s = rng.normal(size=2)
        a, lp, v = pol.act(p, s, rng)
        buf.add(Transition(s, a, v, v, True, lp, v, 0))  # delta = r - V = 0
    trs = list(buf.transitions)
    before = pol.get_flat(p)
    cfg = PPOConfig(entropy_coef=0.0, epochs=2, batch_size=8)
    update_agent(p, make_optimizers(p, cfg.learning_rate), buf, cfg, np.random.default_rng(0))
    assert np.array_equal(pol.get_flat(p), before)
    # with the entropy bonus only the actor moves
    p2 = pol.make_policy(2, pol.ActionSpec("discrete", 2), seed=1)
    states = np.array([t.state for t in trs])
    actions = np.array([t.action for t in trs])
    old = pol.evaluate(p2, states, actions)[0]
    values = pol.evaluate(p2, states, actions)[2]
    _, grad, _ = objective_and_grad(p2, states, actions, old, np.zeros(32), values, PPOConfig(entropy_coef=0.01))
    na = p2.actor.param_count
    assert np.any(grad[:na] != 0) and np.all(grad[na:] == 0)


def test_update_stats_and_buffer_cleared():
    p = pol.make_policy(2, pol.ActionSpec("discrete", 2), seed=2)
    buf = _bandit_buffer(p, {0: 1.0, 1: -1.0}, n=128)
    stats = update_agent(p, make_optimizers(p, 1e-3), buf, PPOConfig(), np.random.default_rng(0))
    assert stats.approx_kl >= -1e-12
    assert stats.n_samples == 128 and len(buf) == 0


def test_nan_update_leaves_parameters_unchanged():
    p = pol.make_policy(2, pol.ActionSpec("discrete", 2), seed=3)
    buf = _bandit_buffer(p, {0: 1.0, 1: 0.0}, n=16)
    buf.transitions[3].reward_aug = np.nan
    before = pol.get_flat(p)
    opts = make_optimizers(p, 1e-3)
    with pytest.raises(nn.NumericError):
        update_agent(p, opts, buf, PPOConfig(), np.random.default_rng(0))
    assert np.array_equal(pol.get_flat(p), before)
    assert opts[0].step_count == 0


def test_update_touches_only_own_parameters():
    a = pol.make_policy(2, pol.ActionSpec("discrete", 2), seed=4)
    b = pol.make_policy(2, pol.ActionSpec("discrete", 2), seed=5)
    b_before = pol.get_flat(b)
    update_agent(a, make_optimizers(a, 1e-3), _bandit_buffer(a, {0: 1.0, 1: 0.0}), PPOConfig(),
                 np.random.default_rng(0))
    assert np.array_equal(pol.get_flat(b), b_before)


def test_config_validation():
    with pytest.raises(ValueError):
        PPOConfig(clip_epsilon=1.5).validate()
    with pytest.raises(ValueError):
        PPOConfig(gamma=1.1).validate()
