"""The ARISE training loop.

One iteration:
  1. roll out ``horizon`` steps; each episode is driven by one agent chosen
     by the biased rank rule, its actions mixed with that agent's particle
     proposal and its rewards topped up with the novelty bonus;
  2. PPO update of every agent on its own buffer;
  3. fitness per agent;
  4. PSO personal/global bests and particle moves;
  5. copy of the fittest agent's parameters to all others;
  6. c1/c2 adaptation from the fitness variance and inertia decay.
"""
from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import envs as envs_mod
from . import nn
from . import policy as pol
from . import swarm as sw
from .novelty import augment_reward, embed_action, fitness as assemble_fitness, novelty_bonus
from .ppo import PPOConfig, UpdateStats, make_optimizers, update_agent
from .rollout import AgentBuffer, Transition

METRIC_COLUMNS = (
    "run_id", "seed", "variant", "env", "iteration", "episodes_done",
    "mean_return_raw", "mean_return_aug", "eval_return", "fitness",
    "var_reward", "diversity", "w", "c1", "c2",
    "mean_entropy", "policy_loss", "value_loss", "wall_ms",
)


class IterationAborted(RuntimeError):
    pass


@dataclass
class AriseConfig:
    num_agents: int = 3
    alpha: float = 0.12
    beta: float = 0.01
    horizon: int | None = None  # None: 2048 discrete, 512 continuous
    total_iterations: int = 50
    max_episodes: int | None = None
    selection_probs: tuple = (0.70, 0.20, 0.10)
    no_swarm: bool = False
    no_adaptive: bool = False
    no_novelty: bool = False
    no_broadcast: bool = False
    broadcast_interval: int = 1
    eval_interval: int = 50
    eval_episodes: int = 10
    hidden: tuple = (64, 64)
    var_decay: float = 0.95
    seed: int = 0

    def validate(self) -> None:
        p = self.selection_probs
        if len(p) != 3 or min(p) < 0 or abs(sum(p) - 1.0) > 1e-12:
            raise ValueError("selection_probs must be three non-negative numbers summing to 1")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.num_agents < 1 or (self.num_agents < 2 and not self.no_swarm):
            raise ValueError("num_agents must be >= 2 unless no_swarm")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be >= 0")
        if self.broadcast_interval < 1 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("broadcast_interval, eval_interval and eval_episodes must be >= 1")


@dataclass
class FitnessRecord:
    mean_reward: float = -math.inf
    mean_novelty: float = 0.0
    fitness: float = -math.inf


@dataclass
class AgentState:
    policy: pol.ActorCriticPolicy
    optimizers: tuple
    buffer: AgentBuffer
    fitness: FitnessRecord = field(default_factory=FitnessRecord)
    particle_index: int = 0


def rank_agents(fitnesses) -> list[int]:
    """Indices by descending fitness, ties to the lower index."""
    return sorted(range(len(fitnesses)), key=lambda i: (-fitnesses[i], i))


def select_agent(ranking, n_agents: int, rng: np.random.Generator, probs=(0.70, 0.20, 0.10)) -> int:
    """Best with p0, second best with p1, uniform with p2; uniform when no ranking yet."""
    if ranking is None:
        return int(rng.integers(n_agents))
    u = rng.random()
    if u < probs[0]:
        return ranking[0]
    if u < probs[0] + probs[1] and len(ranking) > 1:
        return ranking[1]
    if u < probs[0] + probs[1]:
        return ranking[0]
    return int(rng.integers(n_agents))


def selection_distribution(n_agents: int, probs=(0.70, 0.20, 0.10)) -> np.ndarray:
    """Analytic probability of picking the agent at each rank."""
    p = np.full(n_agents, probs[2] / n_agents)
    p[0] += probs[0]
    if n_agents > 1:
        p[1] += probs[1]
    else:
        p[0] += probs[1]
    return p


def mix_action(a_rl, a_pso, alpha: float, spec: pol.ActionSpec, rng: np.random.Generator):
    if spec.discrete:
        return a_pso if rng.random() < alpha else a_rl
    mixed = (1.0 - alpha) * np.asarray(a_rl, dtype=np.float64) + alpha * np.asarray(a_pso, dtype=np.float64)
    return np.clip(mixed, spec.low, spec.high)


def broadcast_best(agents: list[AgentState], fitnesses) -> int | None:
    """Copy the fittest agent's full parameters into every agent.

    Receivers get fresh optimizer state. Returns the source index, or None
    if no agent has a finite fitness.
    """
    f = np.asarray(fitnesses, dtype=np.float64)
    if not np.any(np.isfinite(f)):
        return None
    best = rank_agents(list(f))[0]
    flat = pol.get_flat(agents[best].policy)
    for i, agent in enumerate(agents):
        if i == best:
            continue
        pol.set_flat(agent.policy, flat)
        for opt in agent.optimizers:
            opt.reset()
    return best


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (list, tuple)):
        return ";".join(_fmt(v) for v in x)
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def format_row(row: dict) -> list[str]:
    return [_fmt(row.get(c)) for c in METRIC_COLUMNS]


class Arise:
    """Mutable training state for one run."""

    def __init__(self, config: AriseConfig, ppo_config: PPOConfig | None = None, env_id: str = "cartpole",
                 run_id: str = "", variant: str = "arise", log_wall_time: bool = False):
        config.validate()
        self.config = config
        self.ppo_config = ppo_config or PPOConfig()
        self.ppo_config.validate()
        self.env_id = env_id
        self.run_id = run_id
        self.variant = variant
        self.log_wall_time = log_wall_time

        seq = np.random.SeedSequence(config.seed)
        env_seq, train_seq, swarm_seq, *agent_seqs = seq.spawn(3 + config.num_agents)
        self.env = envs_mod.make_env(env_id, env_seq)
        self.spec = self.env.spec.action_spec
        self.horizon = config.horizon or (2048 if self.spec.discrete else 512)
        self.rng = np.random.default_rng(train_seq)
        self.agents = []
        for i, aseq in enumerate(agent_seqs):
            p = pol.make_policy(self.env.spec.obs_dim, self.spec, config.hidden, aseq)
            self.agents.append(AgentState(p, make_optimizers(p, self.ppo_config.learning_rate),
                                          AgentBuffer(self.horizon), particle_index=i))
        self.swarm = None if config.no_swarm else sw.init_swarm(config.num_agents, self.spec,
                                                                np.random.default_rng(swarm_seq))
        self.var_ref = sw.VarianceReference(config.var_decay)
        self.pso_calls = 0

        self.iteration = 0
        self.episodes_done = 0
        self.total_steps = 0
        self.ranking: list[int] | None = None
        self.obs = None
        self.driver = None
        self.ep_return_raw = 0.0
        self.ep_return_aug = 0.0
        self.episode_returns: list[float] = []
        self._aug_returns: list[float] = []
        self.evals: list[dict] = []
        self.last_eval_bucket = 0

    # -- helpers -------------------------------------------------------------

    @property
    def fitnesses(self) -> list[float]:
        return [a.fitness.fitness for a in self.agents]

    @property
    def swarm_active(self) -> bool:
        return self.swarm is not None

    def best_agent(self) -> int:
        return rank_agents(self.fitnesses)[0]

    def _log_prob(self, policy, state, action) -> float:
        lp, _, _ = pol.evaluate(policy, state[None, :], [action])
        return float(lp[0])

    def _start_episode(self):
        self.obs = self.env.reset()
        self.driver = select_agent(self.ranking, len(self.agents), self.rng, self.config.selection_probs)
        self.ep_return_raw = 0.0
        self.ep_return_aug = 0.0

    # -- one iteration -------------------------------------------------------

    def _rollout(self, completed: list[list[float]], partial_raw: list[float]):
        cfg = self.config
        use_novelty = self.swarm_active and not cfg.no_novelty
        positions = self.swarm.positions if self.swarm_active else None
        for _ in range(self.horizon):
            if self.obs is None:
                self._start_episode()
            i = self.driver
            agent = self.agents[i]
            state = self.obs
            a_rl, logp, v = pol.act(agent.policy, state, self.rng)
            action = a_rl
            if self.swarm_active:
                self.pso_calls += 1
                a_pso = sw.pso_action(self.swarm.particles[agent.particle_index], self.spec)
                action = mix_action(a_rl, a_pso, cfg.alpha, self.spec, self.rng)
                if self.spec.discrete:
                    if action != a_rl:
                        logp = self._log_prob(agent.policy, state, action)
                elif cfg.alpha > 0:
                    logp = self._log_prob(agent.policy, state, action)
            res = self.env.step(action)
            raw = float(res.reward)
            nov = 0.0
            if use_novelty:
                nov = novelty_bonus(embed_action(action, self.spec), positions, agent.particle_index)
            aug = augment_reward(raw, nov, cfg.beta if use_novelty else 0.0)
            done = res.terminated or res.truncated
            agent.buffer.add(Transition(state, action, raw, aug, done, logp, v, i, nov))
            self.total_steps += 1
            self.ep_return_raw += raw
            self.ep_return_aug += aug
            partial_raw[i] += raw
            if done:
                completed[i].append(self.ep_return_raw)
                self.episode_returns.append(self.ep_return_raw)
                self._aug_returns.append(self.ep_return_aug)
                self.episodes_done += 1
                partial_raw[i] = 0.0
                self.obs = None
            else:
                self.obs = res.observation
        if self.obs is not None:
            driver = self.agents[self.driver]
            driver.buffer.bootstrap_value = pol.value(driver.policy, self.obs)

    def train_iteration(self) -> dict:
        """Run one full iteration and return its metrics row."""
        snapshot = self.state_dict()
        try:
            return self._train_iteration()
        except Exception as exc:
            self.load_state_dict(snapshot)
            raise IterationAborted(f"iteration {self.iteration} aborted: {exc}") from exc

    def _train_iteration(self) -> dict:
        t0 = time.perf_counter()
        cfg = self.config
        m = len(self.agents)
        completed: list[list[float]] = [[] for _ in range(m)]
        partial_raw = [0.0] * m
        self._aug_returns: list[float] = []
        episodes_before = len(self.episode_returns)

        # 1. mixed-action rollout with novelty-augmented rewards
        self._rollout(completed, partial_raw)

        # fitness inputs are read before the buffers are consumed
        records = []
        for i, agent in enumerate(self.agents):
            n = len(agent.buffer)
            if n == 0:
                records.append(FitnessRecord())
                continue
            mean_nov = float(np.mean([t.novelty for t in agent.buffer.transitions]))
            mean_rew = float(np.mean(completed[i])) if completed[i] else partial_raw[i]
            records.append(FitnessRecord(mean_rew, mean_nov, assemble_fitness(mean_rew, mean_nov)))

        # 2. independent PPO updates
        stats: list[UpdateStats] = []
        for agent in self.agents:
            if len(agent.buffer):
                stats.append(update_agent(agent.policy, agent.optimizers, agent.buffer, self.ppo_config, self.rng))

        # 3. fitness
        for agent, rec in zip(self.agents, records):
            agent.fitness = rec
        fit = self.fitnesses
        self.ranking = rank_agents(fit)

        # 4. PSO
        var = sw.population_variance(fit)
        diversity = None
        if self.swarm_active:
            sw.update_bests(self.swarm, fit)
            sw.step_swarm(self.swarm)
            diversity = sw.swarm_diversity(self.swarm.positions)

        # 5. broadcast
        if not cfg.no_broadcast and m > 1 and (self.iteration + 1) % cfg.broadcast_interval == 0:
            broadcast_best(self.agents, fit)

        # 6. adaptive scheduling
        if self.swarm_active and not cfg.no_adaptive:
            if self.var_ref.history:
                lo, hi = self.var_ref.thresholds()
                s = self.swarm
                s.c1, s.c2, _ = sw.adapt_coefficients(s.c1, s.c2, fit, lo, hi)
            self.var_ref.push(var)
            progress = (self.iteration + 1) / max(cfg.total_iterations, 1)
            self.swarm.w = sw.decay_inertia(progress)

        self.iteration += 1
        eval_return = None
        bucket = self.episodes_done // cfg.eval_interval
        if bucket > self.last_eval_bucket or self.iteration >= cfg.total_iterations or self._episode_budget_hit():
            self.last_eval_bucket = bucket
            eval_return = self.evaluate()
            shifted = self.env.active if isinstance(self.env, envs_mod.RewardShift) else None
            self.evals.append({"iteration": self.iteration, "episodes_done": self.episodes_done,
                               "eval_return": eval_return, "shift_active": shifted})

        new_eps = self.episode_returns[episodes_before:]
        s = self.swarm
        row = {
            "run_id": self.run_id, "seed": cfg.seed, "variant": self.variant, "env": self.env_id,
            "iteration": self.iteration, "episodes_done": self.episodes_done,
            "mean_return_raw": float(np.mean(new_eps)) if new_eps else None,
            "mean_return_aug": float(np.mean(self._aug_returns)) if self._aug_returns else None,
            "eval_return": eval_return,
            "fitness": list(fit),
            "var_reward": var,
            "diversity": diversity,
            "w": s.w if s else None, "c1": s.c1 if s else None, "c2": s.c2 if s else None,
            "mean_entropy": float(np.mean([st.entropy for st in stats])) if stats else None,
            "policy_loss": float(np.mean([st.policy_loss for st in stats])) if stats else None,
            "value_loss": float(np.mean([st.value_loss for st in stats])) if stats else None,
            "wall_ms": (time.perf_counter() - t0) * 1e3 if self.log_wall_time else None,
        }
        return row

    def _episode_budget_hit(self) -> bool:
        return self.config.max_episodes is not None and self.episodes_done >= self.config.max_episodes

    def finished(self) -> bool:
        return self.iteration >= self.config.total_iterations or self._episode_budget_hit()

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, agent_index: int | None = None, episodes: int | None = None) -> float:
        """Mean greedy return of one agent with no swarm mixing."""
        idx = self.best_agent() if agent_index is None else agent_index
        episodes = episodes or self.config.eval_episodes
        seq = np.random.SeedSequence(self.config.seed, spawn_key=(10_007, len(self.evals)))
        env = envs_mod.make_env(self.env_id, seq)
        if isinstance(env, envs_mod.RewardShift):
            env.active_override = self.env.active
        return evaluate_policy(self.agents[idx].policy, env, episodes)

    # -- state ---------------------------------------------------------------

    def state_dict(self) -> dict:
        """Everything needed for an exact resume, as JSON-able data plus arrays."""
        swarm = None
        if self.swarm is not None:
            s = self.swarm
            swarm = {
                "particles": [{"position": p.position.tolist(), "velocity": p.velocity.tolist(),
                               "pbest_position": p.pbest_position.tolist(), "pbest_fitness": p.pbest_fitness}
                              for p in s.particles],
                "gbest_position": s.gbest_position.tolist(), "gbest_fitness": s.gbest_fitness,
                "w": s.w, "c1": s.c1, "c2": s.c2, "rng": s.rng.bit_generator.state,
            }
        return {
            "iteration": self.iteration, "episodes_done": self.episodes_done, "total_steps": self.total_steps,
            "ranking": self.ranking, "driver": self.driver,
            "obs": None if self.obs is None else self.obs.tolist(),
            "ep_return_raw": self.ep_return_raw, "ep_return_aug": self.ep_return_aug,
            "episode_returns": list(self.episode_returns), "evals": copy.deepcopy(self.evals),
            "last_eval_bucket": self.last_eval_bucket,
            "rng": self.rng.bit_generator.state, "env": self.env.get_state(),
            "var_history": list(self.var_ref.history), "swarm": swarm, "pso_calls": self.pso_calls,
            "fitness": [asdict(a.fitness) for a in self.agents],
            "agents": [{"params": pol.get_flat(a.policy),
                        "optim": [(o.step_count, o.first_moment.copy(), o.second_moment.copy())
                                  for o in a.optimizers]} for a in self.agents],
        }

    def load_state_dict(self, d: dict) -> None:
        self.iteration = d["iteration"]
        self.episodes_done = d["episodes_done"]
        self.total_steps = d["total_steps"]
        self.ranking = None if d["ranking"] is None else list(d["ranking"])
        self.driver = d["driver"]
        self.obs = None if d["obs"] is None else np.array(d["obs"], dtype=np.float64)
        self.ep_return_raw = d["ep_return_raw"]
        self.ep_return_aug = d["ep_return_aug"]
        self.episode_returns = list(d["episode_returns"])
        self.evals = copy.deepcopy(d["evals"])
        self.last_eval_bucket = d["last_eval_bucket"]
        self.rng.bit_generator.state = d["rng"]
        self.env.set_state(d["env"])
        self.var_ref.history = list(d["var_history"])
        self.pso_calls = d["pso_calls"]
        if d["swarm"] is not None:
            s, sd = self.swarm, d["swarm"]
            s.particles = [sw.Particle(np.array(p["position"]), np.array(p["velocity"]),
                                       np.array(p["pbest_position"]), p["pbest_fitness"]) for p in sd["particles"]]
            s.gbest_position = np.array(sd["gbest_position"])
            s.gbest_fitness = sd["gbest_fitness"]
            s.w, s.c1, s.c2 = sd["w"], sd["c1"], sd["c2"]
            s.rng.bit_generator.state = sd["rng"]
        for agent, fd, ad in zip(self.agents, d["fitness"], d["agents"]):
            agent.fitness = FitnessRecord(**fd)
            pol.set_flat(agent.policy, ad["params"])
            agent.buffer.clear()
            for opt, (step, m1, m2) in zip(agent.optimizers, ad["optim"]):
                opt.step_count, opt.first_moment, opt.second_moment = step, np.array(m1), np.array(m2)

    def save_checkpoint(self, directory) -> Path:
        """Write ``manifest.json`` plus one policy and one optimizer fragment per agent."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        state = self.state_dict()
        agents = state.pop("agents")
        for i, (agent, ad) in enumerate(zip(self.agents, agents)):
            pol.save_policy(agent.policy, directory / f"agent{i}.policy.bin")
            with open(directory / f"agent{i}.optim.bin", "wb") as fh:
                header = {"step_counts": [o[0] for o in ad["optim"]],
                          "sizes": [len(o[1]) for o in ad["optim"]],
                          "hyper": [[o.learning_rate, o.beta1, o.beta2, o.eps] for o in agent.optimizers]}
                arrays = [a for o in ad["optim"] for a in (o[1], o[2])]
                nn.write_fragment(fh, header, arrays)
        manifest = {
            "format": "arise-checkpoint/1",
            "env_id": self.env_id, "run_id": self.run_id, "variant": self.variant,
            "config": _config_to_json(self.config), "ppo_config": asdict(self.ppo_config),
            "num_agents": len(self.agents), "state": state,
        }
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return path

    @classmethod
    def load_checkpoint(cls, path) -> "Arise":
        path = Path(path)
        directory = path if path.is_dir() else path.parent
        manifest = json.loads((directory / "manifest.json").read_text())
        config = AriseConfig(**_config_from_json(manifest["config"]))
        trainer = cls(config, PPOConfig(**manifest["ppo_config"]), manifest["env_id"],
                      manifest["run_id"], manifest["variant"])
        state = manifest["state"]
        agents = []
        for i in range(manifest["num_agents"]):
            p = pol.load_policy(directory / f"agent{i}.policy.bin")
            with open(directory / f"agent{i}.optim.bin", "rb") as fh:
                header, data = nn.read_fragment(fh)
            optim, k = [], 0
            for step, size in zip(header["step_counts"], header["sizes"]):
                optim.append((step, data[k:k + size], data[k + size:k + 2 * size]))
                k += 2 * size
            agents.append({"params": pol.get_flat(p), "optim": optim})
        state["agents"] = agents
        trainer.load_state_dict(state)
        return trainer


def _config_to_json(config: AriseConfig) -> dict:
    return {f.name: (list(v) if isinstance(v := getattr(config, f.name), tuple) else v) for f in fields(config)}


def _config_from_json(d: dict) -> dict:
    out = dict(d)
    for key in ("selection_probs", "hidden"):
        out[key] = tuple(out[key])
    return out


def evaluate_policy(policy: pol.ActorCriticPolicy, env, episodes: int) -> float:
    totals = []
    for _ in range(episodes):
        obs = env.reset()
        total, done = 0.0, False
        while not done:
            res = env.step(pol.greedy_action(policy, obs))
            total += res.reward
            done = res.terminated or res.truncated
            obs = res.observation
        totals.append(total)
    return float(np.mean(totals))


def convergence_index(eval_returns, frac: float = 0.9) -> int | None:
    """First evaluation index whose return reaches ``frac`` of the run's maximum."""
    r = np.asarray(eval_returns, dtype=np.float64)
    if r.size == 0:
        return None
    target = frac * r.max() if r.max() >= 0 else r.max() / frac
    return int(np.argmax(r >= target))


@dataclass
class TrainingReport:
    rows: list[dict]
    episode_returns: list[float]
    evals: list[dict]
    final_eval: float | None
    convergence_eval_index: int | None
    convergence_episodes: int | None
    trainer: Arise = field(repr=False, default=None)


def run_training(config: AriseConfig, ppo_config: PPOConfig | None = None, env_id: str = "cartpole",
                 run_id: str = "", variant: str = "arise", checkpoint_dir=None, trainer: Arise | None = None,
                 on_row=None, log_wall_time: bool = False) -> TrainingReport:
    """Train until ``total_iterations`` (or ``max_episodes``) is reached.

    A checkpoint is written to ``checkpoint_dir`` before the first and after
    the last iteration when a directory is given.
    """
    if trainer is None:
        trainer = Arise(config, ppo_config, env_id, run_id, variant, log_wall_time)
        if checkpoint_dir is not None:
            trainer.save_checkpoint(Path(checkpoint_dir) / "initial")
    rows = []
    while not trainer.finished():
        row = trainer.train_iteration()
        rows.append(row)
        if on_row is not None:
            on_row(row)
    if checkpoint_dir is not None and rows:
        trainer.save_checkpoint(Path(checkpoint_dir) / "final")
    evals = trainer.evals
    returns = [e["eval_return"] for e in evals]
    conv = convergence_index(returns)
    return TrainingReport(
        rows=rows, episode_returns=list(trainer.episode_returns), evals=list(evals),
        final_eval=returns[-1] if returns else None,
        convergence_eval_index=conv,
        convergence_episodes=evals[conv]["episodes_done"] if conv is not None else None,
        trainer=trainer,
    )
