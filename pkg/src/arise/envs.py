"""Native classic-control environments and a scheduled reward-shift wrapper.

Constants follow the usual classic-control definitions (CartPole-v1,
MountainCarContinuous-v0, Pendulum-v1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .policy import ActionSpec, InvalidActionError


class ConfigError(ValueError):
    pass


@dataclass
class EnvSpec:
    obs_dim: int
    action_spec: ActionSpec
    max_episode_steps: int


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


class Env:
    spec: EnvSpec
    state: np.ndarray

    def __init__(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.steps = 0

    def reset(self) -> np.ndarray:
        raise NotImplementedError

    def step(self, action) -> StepResult:
        raise NotImplementedError

    def get_state(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "state": None if self.state is None else self.state.tolist(),
            "steps": self.steps,
        }

    def set_state(self, d: dict) -> None:
        self.rng.bit_generator.state = d["rng"]
        self.state = None if d["state"] is None else np.array(d["state"], dtype=np.float64)
        self.steps = d["steps"]


# -- CartPole ---------------------------------------------------------------

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLEMASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4


def cartpole_dynamics(state, action) -> np.ndarray:
    """One explicit-Euler step of the cart-pole equations."""
    if action not in (0, 1):
        raise InvalidActionError(f"cart-pole action must be 0 or 1, got {action!r}")
    x, x_dot, theta, theta_dot = state
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    cos, sin = math.cos(theta), math.sin(theta)
    temp = (force + POLEMASS_LENGTH * theta_dot ** 2 * sin) / TOTAL_MASS
    theta_acc = (GRAVITY * sin - cos * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos ** 2 / TOTAL_MASS))
    x_acc = temp - POLEMASS_LENGTH * theta_acc * cos / TOTAL_MASS
    return np.array([
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    ])


class CartPole(Env):
    spec = EnvSpec(4, ActionSpec("discrete", 2), 500)

    def reset(self):
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        self.steps = 0
        return self.state.copy()

    def step(self, action):
        action = int(action)
        self.state = cartpole_dynamics(self.state, action)
        self.steps += 1
        x, _, theta, _ = self.state
        terminated = bool(abs(x) > X_LIMIT or abs(theta) > THETA_LIMIT)
        truncated = not terminated and self.steps >= self.spec.max_episode_steps
        return StepResult(self.state.copy(), 1.0, terminated, truncated)


# -- MountainCarContinuous ---------------------------------------------------

class MountainCarContinuous(Env):
    spec = EnvSpec(2, ActionSpec("continuous", 1, [-1.0], [1.0]), 999)
    MIN_POS, MAX_POS, MAX_SPEED, GOAL = -1.2, 0.6, 0.07, 0.45
    POWER = 0.0015

    def reset(self):
        self.state = np.array([self.rng.uniform(-0.6, -0.4), 0.0])
        self.steps = 0
        return self.state.copy()

    def step(self, action):
        force = min(max(float(np.asarray(action).reshape(-1)[0]), -1.0), 1.0)
        pos, vel = self.state
        vel += force * self.POWER - 0.0025 * math.cos(3 * pos)
        vel = min(max(vel, -self.MAX_SPEED), self.MAX_SPEED)
        pos += vel
        pos = min(max(pos, self.MIN_POS), self.MAX_POS)
        if pos == self.MIN_POS and vel < 0:
            vel = 0.0
        self.state = np.array([pos, vel])
        self.steps += 1
        terminated = bool(pos >= self.GOAL and vel >= 0)
        reward = -0.1 * force ** 2 + (100.0 if terminated else 0.0)
        truncated = not terminated and self.steps >= self.spec.max_episode_steps
        return StepResult(self.state.copy(), reward, terminated, truncated)


# -- Pendulum ----------------------------------------------------------------

def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


class Pendulum(Env):
    spec = EnvSpec(3, ActionSpec("continuous", 1, [-2.0], [2.0]), 200)
    G, M, L, DT, MAX_SPEED, MAX_TORQUE = 10.0, 1.0, 1.0, 0.05, 8.0, 2.0

    def reset(self):
        self.state = self.rng.uniform([-math.pi, -1.0], [math.pi, 1.0])
        self.steps = 0
        return self._obs()

    def _obs(self):
        th, thdot = self.state
        return np.array([math.cos(th), math.sin(th), thdot])

    def step(self, action):
        u = min(max(float(np.asarray(action).reshape(-1)[0]), -self.MAX_TORQUE), self.MAX_TORQUE)
        th, thdot = self.state
        cost = angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
        thdot = thdot + (3 * self.G / (2 * self.L) * math.sin(th) + 3.0 / (self.M * self.L ** 2) * u) * self.DT
        thdot = min(max(thdot, -self.MAX_SPEED), self.MAX_SPEED)
        th = th + thdot * self.DT
        self.state = np.array([th, thdot])
        self.steps += 1
        truncated = self.steps >= self.spec.max_episode_steps
        return StepResult(self._obs(), -cost, False, truncated)


# -- reward shift ------------------------------------------------------------

SHIFT_PRESETS = ("center-penalty-v1", "affine")


@dataclass
class RewardShiftConfig:
    shift_episode: int
    mode: str
    parameters: tuple = ()

    def __post_init__(self):
        if self.mode not in SHIFT_PRESETS:
            raise ConfigError(f"unknown reward-shift preset {self.mode!r}")
        if self.shift_episode < 0:
            raise ConfigError("shift_episode must be >= 0")
        if self.mode == "affine" and len(self.parameters) != 2:
            raise ConfigError("affine shift needs parameters a,b")


class RewardShift:
    """Applies a reward transform from ``shift_episode`` onward.

    ``episode`` counts resets after the first one, i.e. completed or
    abandoned episodes. ``active_override`` pins the shift on or off
    (used by evaluation copies).
    """

    def __init__(self, env: Env, config: RewardShiftConfig, episode_counter: int = 0):
        if config.mode == "center-penalty-v1" and not isinstance(env, CartPole):
            raise ConfigError("center-penalty-v1 applies to cartpole only")
        self.env = env
        self.config = config
        self.episode = episode_counter
        self.active_override: bool | None = None
        self._started = False

    @property
    def spec(self):
        return self.env.spec

    @property
    def rng(self):
        return self.env.rng

    @property
    def active(self) -> bool:
        if self.active_override is not None:
            return self.active_override
        return self.episode >= self.config.shift_episode

    def reset(self):
        if self._started:
            self.episode += 1
        self._started = True
        return self.env.reset()

    def transform(self, reward: float, observation) -> float:
        if not self.active:
            return reward
        if self.config.mode == "center-penalty-v1":
            return reward - 0.5 * abs(float(observation[0])) / X_LIMIT
        a, b = self.config.parameters
        return a * reward + b

    def step(self, action):
        res = self.env.step(action)
        res.reward = self.transform(res.reward, res.observation)
        return res

    def get_state(self) -> dict:
        return {"inner": self.env.get_state(), "episode": self.episode, "started": self._started}

    def set_state(self, d: dict) -> None:
        self.env.set_state(d["inner"])
        self.episode = d["episode"]
        self._started = d["started"]


def reward_shift_wrap(env: Env, shift_config: RewardShiftConfig, episode_counter: int = 0) -> RewardShift:
    return RewardShift(env, shift_config, episode_counter)


ENVS = {"cartpole": CartPole, "mountaincar-cont": MountainCarContinuous, "pendulum": Pendulum}


def parse_env_id(env_id: str) -> tuple[str, RewardShiftConfig | None]:
    """``name`` or ``name+shift:<preset>:<episode>[:a,b]``."""
    base, _, suffix = env_id.partition("+")
    if base not in ENVS:
        raise ConfigError(f"unknown environment {base!r}; choose from {sorted(ENVS)}")
    if not suffix:
        return base, None
    parts = suffix.split(":")
    if parts[0] != "shift" or len(parts) not in (3, 4):
        raise ConfigError(f"malformed env suffix {suffix!r}")
    try:
        episode = int(parts[2])
        params = tuple(float(v) for v in parts[3].split(",")) if len(parts) == 4 else ()
    except ValueError as exc:
        raise ConfigError(f"malformed env suffix {suffix!r}") from exc
    return base, RewardShiftConfig(episode, parts[1], params)


def make_env(env_id: str, seed=None):
    base, shift = parse_env_id(env_id)
    env = ENVS[base](seed)
    if shift is not None:
        return reward_shift_wrap(env, shift)
    return env
