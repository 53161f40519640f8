"""PPO actor-critics with particle-swarm action exploration, novelty shaping and best-agent broadcasting."""
from .orchestrator import Arise, AriseConfig, run_training
from .ppo import PPOConfig

__all__ = ["Arise", "AriseConfig", "PPOConfig", "run_training"]
__version__ = "0.1.0"
