"""Particle swarm in action space with variance-driven coefficient adaptation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .policy import ActionSpec

log = logging.getLogger(__name__)

W_START, W_END = 0.7, 0.3
C_INIT = 1.5
C_MIN, C_MAX = 0.5, 2.5
ADAPT_DELTA = 0.05


class UndefinedMetricError(ValueError):
    pass


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    pbest_position: np.ndarray
    pbest_fitness: float = -np.inf

    def copy(self) -> "Particle":
        return Particle(self.position.copy(), self.velocity.copy(), self.pbest_position.copy(), self.pbest_fitness)


@dataclass
class Bounds:
    low: np.ndarray
    high: np.ndarray
    v_max: np.ndarray

    @classmethod
    def for_spec(cls, spec: ActionSpec) -> "Bounds":
        if spec.discrete:
            # positions live in logit-like space, decoded by argmax
            low, high = np.zeros(spec.dim), np.ones(spec.dim)
            return cls(low, high, np.ones(spec.dim))
        return cls(spec.low.copy(), spec.high.copy(), 0.25 * (spec.high - spec.low))


@dataclass
class SwarmState:
    particles: list[Particle]
    bounds: Bounds
    rng: np.random.Generator
    gbest_position: np.ndarray = None
    gbest_fitness: float = -np.inf
    w: float = W_START
    c1: float = C_INIT
    c2: float = C_INIT
    skipped: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.particles) < 2:
            raise ValueError("a swarm needs at least two particles")
        if self.gbest_position is None:
            self.gbest_position = self.particles[0].position.copy()

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.particles])


def init_swarm(n: int, spec: ActionSpec, rng: np.random.Generator) -> SwarmState:
    """Positions uniform in the bounds, velocities uniform in +-v_max/2."""
    bounds = Bounds.for_spec(spec)
    particles = []
    for _ in range(n):
        pos = rng.uniform(bounds.low, bounds.high)
        vel = rng.uniform(-bounds.v_max / 2, bounds.v_max / 2)
        particles.append(Particle(pos, vel, pos.copy()))
    return SwarmState(particles, bounds, rng)


def pso_action(particle: Particle, spec: ActionSpec):
    pos = particle.position
    if pos.shape != (spec.dim,):
        raise ValueError(f"particle has shape {pos.shape}, action spec needs ({spec.dim},)")
    if spec.discrete:
        return int(np.argmax(pos))
    return np.clip(pos, spec.low, spec.high)


def update_particle(particle: Particle, gbest_position, w, c1, c2, rng: np.random.Generator,
                    v_max, low=None, high=None, r1=None, r2=None) -> Particle:
    """Velocity/position step toward the personal and global bests.

    r1, r2 are drawn per component unless given. Velocity is clamped to
    [-v_max, v_max] and the new position to [low, high] when bounds are given.
    """
    if min(w, c1, c2) < 0:
        raise ValueError("PSO coefficients must be non-negative")
    p = particle.position
    shape = p.shape
    if r1 is None:
        r1 = rng.random(shape)
    if r2 is None:
        r2 = rng.random(shape)
    v = w * particle.velocity + c1 * r1 * (particle.pbest_position - p) + c2 * r2 * (gbest_position - p)
    v = np.clip(v, -v_max, v_max)
    new_p = p + v
    if low is not None:
        new_p = np.clip(new_p, low, high)
    return Particle(new_p, v, particle.pbest_position.copy(), particle.pbest_fitness)


def step_swarm(swarm: SwarmState) -> None:
    b = swarm.bounds
    swarm.particles = [
        update_particle(p, swarm.gbest_position, swarm.w, swarm.c1, swarm.c2, swarm.rng, b.v_max, b.low, b.high)
        for p in swarm.particles
    ]


def update_bests(swarm: SwarmState, fitnesses, positions=None) -> None:
    """Strict-improvement personal bests; global best is the best personal best."""
    fitnesses = np.asarray(fitnesses, dtype=np.float64)
    if len(fitnesses) != len(swarm.particles):
        raise ValueError("need one fitness per particle")
    if positions is None:
        positions = [p.position for p in swarm.particles]
    swarm.skipped = []
    for i, (part, f) in enumerate(zip(swarm.particles, fitnesses)):
        if np.isnan(f):
            log.warning("particle %d has NaN fitness; skipped", i)
            swarm.skipped.append(i)
            continue
        if f > part.pbest_fitness:
            part.pbest_fitness = float(f)
            part.pbest_position = np.array(positions[i], dtype=np.float64)
        if part.pbest_fitness > swarm.gbest_fitness:
            swarm.gbest_fitness = part.pbest_fitness
            swarm.gbest_position = part.pbest_position.copy()


def population_variance(fitnesses) -> float:
    f = np.asarray(fitnesses, dtype=np.float64)
    f = f[np.isfinite(f)]
    if len(f) < 2:
        return float("nan")
    return float(np.var(f))


def adapt_coefficients(c1, c2, fitnesses, var_low, var_high, delta=ADAPT_DELTA, c_min=C_MIN, c_max=C_MAX):
    """Push-pull c1/c2 on the fitness variance. Returns (c1, c2, variance).

    Non-finite fitnesses are ignored; fewer than two finite values leaves
    the coefficients unchanged.
    """
    var = population_variance(fitnesses)
    if np.isnan(var):
        return c1, c2, var
    if var > var_high:
        c2, c1 = min(c2 + delta, c_max), max(c1 - delta, c_min)
    elif var < var_low:
        c1, c2 = min(c1 + delta, c_max), max(c2 - delta, c_min)
    return c1, c2, var


def decay_inertia(progress: float, w_start: float = W_START, w_end: float = W_END) -> float:
    progress = min(max(float(progress), 0.0), 1.0)
    return w_start + (w_end - w_start) * progress


def swarm_diversity(positions) -> float:
    """Mean Euclidean distance over unordered pairs."""
    pts = np.asarray(positions, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    m = len(pts)
    if m < 2:
        raise UndefinedMetricError("diversity needs at least two particles")
    i, j = np.triu_indices(m, k=1)
    return float(np.mean(np.linalg.norm(pts[i] - pts[j], axis=1)))


@dataclass
class VarianceReference:
    """Exponentially weighted median of past fitness variances.

    Weight of a value observed k updates ago is ``decay**k``.
    """
    decay: float = 0.95
    history: list[float] = field(default_factory=list)

    def median(self) -> float:
        if not self.history:
            return float("nan")
        vals = np.asarray(self.history)
        weights = self.decay ** np.arange(len(vals) - 1, -1, -1, dtype=np.float64)
        order = np.argsort(vals, kind="stable")
        cum = np.cumsum(weights[order])
        k = int(np.searchsorted(cum, 0.5 * cum[-1]))
        return float(vals[order][k])

    def thresholds(self, low_factor=0.5, high_factor=1.5) -> tuple[float, float]:
        m = self.median()
        return low_factor * m, high_factor * m

    def push(self, var: float) -> None:
        if np.isfinite(var):
            self.history.append(float(var))
