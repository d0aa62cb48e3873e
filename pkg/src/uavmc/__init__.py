"""Multi-connectivity UAV downlink simulator with finite-blocklength
reliability and a hierarchical multi-agent PPO training stack."""

from .channel import AntennaConfig, LinkState, RadioParams
from .env import (ClusteringStrategy, EnvConfig, NetworkEnv, PowerAllocation,
                  StepOutcome, objective_value)
from .fbl import ClusterSignalModel, ReliabilityTargets
from .geometry import MobilityParams, ServiceArea, UserState
from .hierarchy import AgentSet, EvalStats, build_agents, evaluate, train
from .rl.ppo import TrainerConfig

__version__ = "0.1.0"

__all__ = [
    "AgentSet", "AntennaConfig", "ClusterSignalModel", "ClusteringStrategy",
    "EnvConfig", "EvalStats", "LinkState", "MobilityParams", "NetworkEnv",
    "PowerAllocation", "RadioParams", "ReliabilityTargets", "ServiceArea",
    "StepOutcome", "TrainerConfig", "UserState", "build_agents", "evaluate",
    "objective_value", "train",
]
