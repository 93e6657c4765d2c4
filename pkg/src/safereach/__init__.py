"""Safe reach-to-contact laboratory.

A deterministic kinematic simulator for reach-to-contact tasks, a
contact-aware shaped reward with named ablation presets, an off-policy
actor-critic trainer, a kinetic-energy safety shield (low-pass filter plus
radial energy projection, optional barrier QP), and an evaluation harness
for ablation and shielded-vs-unshielded studies.
"""
from .env import (
    ContactEvent,
    EnvConfig,
    EnvState,
    ReachEnv,
    StepResult,
    calibrated_impact_gain,
    contact_force,
    distance_to_goal,
)
from .rewards import (
    PRESETS,
    RewardContext,
    RewardWeights,
    jerk_reward,
    proximity_reward,
    reach_reward,
    safety_reward,
    total_reward,
)
from .shield import (
    ClfConfig,
    EnergyShield,
    LowPassFilter,
    ShieldConfig,
    ShieldPipeline,
    h_value,
    ke_project,
    lpf_coefficient,
    nagumo_ok,
    shield_qp,
)

__version__ = "0.1.0"

__all__ = [
    "ClfConfig",
    "ContactEvent",
    "EnergyShield",
    "EnvConfig",
    "EnvState",
    "LowPassFilter",
    "PRESETS",
    "ReachEnv",
    "RewardContext",
    "RewardWeights",
    "ShieldConfig",
    "ShieldPipeline",
    "StepResult",
    "calibrated_impact_gain",
    "contact_force",
    "distance_to_goal",
    "h_value",
    "jerk_reward",
    "ke_project",
    "lpf_coefficient",
    "nagumo_ok",
    "proximity_reward",
    "reach_reward",
    "safety_reward",
    "shield_qp",
    "total_reward",
    "__version__",
]
