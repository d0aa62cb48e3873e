from .mlp import AdamState, Mlp, adam_update
from .policy import BernoulliGaussianHead, BernoulliHead, GaussianHead
from .ppo import PpoAgent, RolloutBuffer, TrainerConfig, collect_and_update, gae, ppo_loss

__all__ = [
    "AdamState", "Mlp", "adam_update",
    "BernoulliGaussianHead", "BernoulliHead", "GaussianHead",
    "PpoAgent", "RolloutBuffer", "TrainerConfig", "collect_and_update",
    "gae", "ppo_loss",
]
