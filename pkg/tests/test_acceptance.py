"""Acceptance criteria, one test each, at the tolerances they are stated with.

Every test appends a single PASS/FAIL line (with the measured numbers) to the
"acceptance criteria" section of the pytest terminal summary.
"""
import time

import numpy as np
import pytest
from scipy import stats

from arise import novelty, policy as pol, swarm as sw
from arise.experiments import ablation_final_evals, nonstationary_recovery, ppo_sanity
from arise.config import parse_config
from arise.harness import RunSpec, run_single
from arise.orchestrator import Arise, AriseConfig, format_row, run_training, select_agent
from arise.ppo import PPOConfig, objective_and_grad
from arise.rollout import gae
from conftest import ACCEPTANCE_LINES
from oracles import central_diff, gae_forward_sum, max_rel_err

SEEDS = range(5)


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


# 1 -------------------------------------------------------------------------

def _gradient_case(seed, discrete, cfg, with_surrogate=True):
    rng = np.random.default_rng(seed)
    obs_dim = int(rng.integers(2, 6))
    spec = pol.ActionSpec("discrete", int(rng.integers(2, 5))) if discrete else \
        pol.ActionSpec("continuous", int(rng.integers(1, 4)), -1, 1)
    hidden = tuple(int(h) for h in rng.integers(3, 9, size=2))
    p = pol.make_policy(obs_dim, spec, hidden=hidden, seed=seed)
    pol.set_flat(p, pol.get_flat(p) + 0.3 * rng.normal(size=p.param_count))
    n = 12
    states = rng.normal(size=(n, obs_dim))
    actions = rng.integers(0, spec.dim, size=n) if discrete else rng.normal(size=(n, spec.dim))
    logp = pol.evaluate(p, states, actions)[0]
    # old log-probs put some ratios inside and some outside the clip range, never on a kink
    old = logp + rng.uniform(-0.4, 0.4, size=n)
    rho = np.exp(logp - old)
    while np.min(np.abs(np.abs(rho - 1) - cfg.clip_epsilon)) < 1e-3:
        old = logp + rng.uniform(-0.4, 0.4, size=n)
        rho = np.exp(logp - old)
    adv, ret = rng.normal(size=n), rng.normal(size=n)
    if not with_surrogate:
        adv = np.zeros(n)  # the clipped surrogate and its gradient vanish
    _, grad, _ = objective_and_grad(p, states, actions, old, adv, ret, cfg)

    def f(theta):
        q = p.copy()
        pol.set_flat(q, theta)
        return objective_and_grad(q, states, actions, old, adv, ret, cfg)[0]

    return max_rel_err(grad, central_diff(f, pol.get_flat(p), h=1e-6))


def test_criterion_1_gradient_oracle():
    objectives = {
        "surrogate": (PPOConfig(entropy_coef=0.0, value_coef=0.0), True),
        "value": (PPOConfig(entropy_coef=0.0, value_coef=1.0), False),
        "entropy": (PPOConfig(entropy_coef=1.0, value_coef=0.0), False),
        "combined": (PPOConfig(entropy_coef=0.05, value_coef=0.5), True),
    }
    t0 = time.perf_counter()
    worst = {}
    for name, (cfg, with_surrogate) in objectives.items():
        errs = [_gradient_case(s, s % 2 == 0, cfg, with_surrogate) for s in range(20)]
        worst[name] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert record(1, ok, f"max rel err over 20 nets each: {detail}; {elapsed:.1f}s (limit 30s)")


# 2 -------------------------------------------------------------------------

def test_criterion_2_gae_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = rng.random(n) < 0.2
        b = float(rng.normal())
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.8, 1.0)
        adv = gae(r, v, d, b, gamma, lam)
        worst = max(worst, float(np.max(np.abs(adv - gae_forward_sum(r, v, d, b, gamma, lam)))))
    assert record(2, worst < 1e-10, f"max |recursive - forward sum| over 1000 trajectories = {worst:.1e}")


# 3 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_3_ppo_baseline_sanity():
    results, times = [], []
    for seed in SEEDS:
        t0 = time.perf_counter()
        results.append(ppo_sanity(seed, max_episodes=1000, window=100, threshold=195.0))
        times.append(time.perf_counter() - t0)
    solved = sum(r.solved for r in results)
    ok = solved >= 4 and max(times) <= 300
    eps = ", ".join(f"s{r.seed}:{r.episodes if r.solved else 'no'}" for r in results)
    assert record(3, ok, f"ppo reached 100-ep mean >= 195 in {solved}/5 seeds (episode {eps}); "
                         f"max {max(times):.0f}s/seed (limit 300s)")


# 4 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_ablation_ordering():
    res = ablation_final_evals(["arise", "arise_no_swarm", "arise_no_adaptive"], SEEDS, iterations=60)
    m = {k: float(np.mean(v)) for k, v in res.items()}
    ok = m["arise"] >= m["arise_no_swarm"] - 5 and m["arise"] >= m["arise_no_adaptive"] - 5
    raw = "; ".join(f"{k} {m[k]:.1f} {[round(x, 1) for x in v]}" for k, v in res.items())
    assert record(4, ok, f"mean final eval over 5 seeds: {raw}")


# 5 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_nonstationary_adaptation():
    rec = {v: [nonstationary_recovery(v, s, shift_episode=500)[0] for s in SEEDS] for v in ("arise", "ppo")}
    med = {v: float(np.median(x)) for v, x in rec.items()}
    ok = med["arise"] <= med["ppo"]
    assert record(5, ok, f"median recovery episodes (shift at 500 of 1000): arise {med['arise']} {rec['arise']}, "
                         f"ppo {med['ppo']} {rec['ppo']}")


# 6 -------------------------------------------------------------------------

def _sphere(seed, iters=200):
    rng = np.random.default_rng(seed)
    spec = pol.ActionSpec("continuous", 2, [-1.0, -1.0], [1.0, 1.0])
    swarm = sw.init_swarm(3, spec, rng)
    hist = []
    for _ in range(iters):
        sw.update_bests(swarm, [-float(p.position @ p.position) for p in swarm.particles])
        hist.append(swarm.gbest_fitness)
        sw.step_swarm(swarm)
    return float(np.linalg.norm(swarm.gbest_position)), hist


def test_criterion_6_swarm_mechanics():
    sphere = [_sphere(s) for s in SEEDS]
    hits = sum(norm < 0.1 for norm, _ in sphere)
    monotone = all(all(b >= a for a, b in zip(h, h[1:])) for _, h in sphere)
    in_range = True
    for env_id, seed in (("cartpole", 0), ("cartpole", 1), ("pendulum", 0)):
        t = Arise(AriseConfig(seed=seed, horizon=256, total_iterations=12, hidden=(16, 16), eval_episodes=1),
                  env_id=env_id)
        gb = []
        while not t.finished():
            t.train_iteration()
            s = t.swarm
            in_range &= 0.5 <= s.c1 <= 2.5 and 0.5 <= s.c2 <= 2.5 and 0.3 <= s.w <= 0.7
            gb.append(s.gbest_fitness)
        monotone &= all(b >= a for a, b in zip(gb, gb[1:]))
    ok = hits >= 4 and monotone and in_range
    assert record(6, ok, f"sphere |gbest|<0.1 in {hits}/5 seeds; gbest monotone {monotone}; "
                         f"coefficients in range {in_range}")


# 7 -------------------------------------------------------------------------

def test_criterion_7_broadcast_invariant():
    checked, ok = 0, True
    for env_id in ("cartpole", "mountaincar-cont"):
        t = Arise(AriseConfig(horizon=256, total_iterations=6, hidden=(16, 16), eval_episodes=1), env_id=env_id)
        while not t.finished():
            t.train_iteration()
            ok &= len({pol.get_flat(a.policy).tobytes() for a in t.agents}) == 1
            checked += 1
    assert record(7, ok, f"all agents bitwise equal after {checked} broadcasting iterations: {ok}")


# 8 -------------------------------------------------------------------------

def test_criterion_8_selection_distribution():
    rng = np.random.default_rng(8)
    ranking = [1, 2, 0]
    n = 100_000
    draws = np.array([select_agent(ranking, 3, rng) for _ in range(n)])
    freq = np.array([np.mean(draws == a) for a in ranking])
    target = np.array([0.7333, 0.2333, 0.0333])
    exact = np.array([0.7 + 0.1 / 3, 0.2 + 0.1 / 3, 0.1 / 3])
    p = stats.chisquare(freq * n, exact * n).pvalue
    ok = bool(np.all(np.abs(freq - target) <= 0.01) and p > 0.01)
    assert record(8, ok, f"frequencies {np.round(freq, 4).tolist()} vs {target.tolist()}, chi2 p = {p:.3f}")


# 9 -------------------------------------------------------------------------

def test_criterion_9_novelty_bounds():
    rng = np.random.default_rng(9)
    calls, bad, zero_mismatch = 1_000_000, 0, 0
    dims = rng.integers(1, 4, size=calls)
    counts = rng.integers(2, 5, size=calls)
    scales = 10.0 ** rng.uniform(-3, 2, size=calls)
    coincide = rng.random(calls) < 0.1
    for k in range(calls):
        pos = rng.normal(scale=scales[k], size=(counts[k], dims[k]))
        if coincide[k]:
            emb = pos[1].copy()
        else:
            emb = rng.normal(scale=scales[k], size=dims[k])
        b = novelty.novelty_bonus(emb, pos, 0)
        if not 0.0 <= b < 1.0:
            bad += 1
        nearest_equal = bool(np.any(np.all(pos[1:] == emb, axis=1)))
        zero_mismatch += (b == 0.0) != nearest_equal
    ok = bad == 0 and zero_mismatch == 0
    assert record(9, ok, f"{calls} calls: {bad} outside [0, 1), {zero_mismatch} zero/coincidence mismatches")


# 10 ------------------------------------------------------------------------

def _tiny_experiment(out):
    return parse_config(overrides={
        "env": "cartpole", "variant": "arise", "seeds": "3", "out": str(out), "checkpoint": "false",
        "arise.horizon": "256", "arise.total_iterations": "6", "arise.hidden": "16,16",
        "arise.eval_episodes": "2", "eval_interval": "5"})


def test_criterion_10_determinism(tmp_path):
    paths = []
    for name in ("a", "b"):
        cfg = _tiny_experiment(tmp_path / name)
        (tmp_path / name).mkdir()
        assert run_single(RunSpec("arise", "cartpole", 3, cfg))["ok"]
        paths.append(next((tmp_path / name).glob("*.csv")))
    identical = paths[0].read_bytes() == paths[1].read_bytes()

    resumed_ok = True
    for env_id in ("cartpole", "pendulum+shift:affine:4:1,-1"):
        cfg = AriseConfig(seed=5, horizon=192, total_iterations=6, hidden=(16, 16), eval_episodes=2,
                          eval_interval=3)
        full = [format_row(r) for r in run_training(cfg, env_id=env_id).rows]
        t = Arise(cfg, env_id=env_id)
        head = [format_row(t.train_iteration()) for _ in range(3)]
        t.save_checkpoint(tmp_path / env_id.replace(":", "_"))
        back = Arise.load_checkpoint(tmp_path / env_id.replace(":", "_") / "manifest.json")
        tail = [format_row(r) for r in run_training(cfg, trainer=back).rows]
        resumed_ok &= head + tail == full
    ok = identical and resumed_ok
    assert record(10, ok, f"byte-identical CSVs {identical}; checkpoint resume exact {resumed_ok}")
