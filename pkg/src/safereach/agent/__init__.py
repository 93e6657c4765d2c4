"""Policy learning: actor-critic trainer, CEM sanity trainer, checkpoints."""
from .cem import CemConfig, train_cem
from .checkpoint import (
    ArchitectureError,
    CheckpointError,
    ChecksumError,
    PolicyParams,
    load_policy,
    save_policy,
)
from .networks import QCritic, SquashedGaussianActor
from .replay import ReplayBuffer, Transition
from .sac import AgentConfig, SacAgent, SeedResult, TorchPolicy, TrainingDiverged, train

__all__ = [
    "AgentConfig",
    "ArchitectureError",
    "CemConfig",
    "CheckpointError",
    "ChecksumError",
    "PolicyParams",
    "QCritic",
    "ReplayBuffer",
    "SacAgent",
    "SeedResult",
    "SquashedGaussianActor",
    "TorchPolicy",
    "TrainingDiverged",
    "Transition",
    "load_policy",
    "save_policy",
    "train",
    "train_cem",
]
