"""Contact-aware shaped reward.

Four terms, combined as a weighted sum:

* reach: negative distance to the hand, replaced by a large bonus at the
  grasp event,
* safety: positive credit for gentle contact, shrinking linearly to zero
  at the force threshold and turning into a penalty above it,
* jerk: penalty on the change between consecutive displacement commands
  (discourages jittery motion),
* proximity: credit for taking large steps while still far from the hand
  (encourages fast early approach, fine late approach).

The named weight presets RF1..RF5 enumerate the ablation ladder from
reach-only to the full shaping.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

DEFAULT_CONTACT_BONUS = 500.0


@dataclass(frozen=True)
class RewardWeights:
    """Weights for the reach, safety, jerk and proximity terms."""

    w_r: float = 1.0
    w_s: float = 0.0
    w_j: float = 0.0
    w_p: float = 0.0

    def __post_init__(self) -> None:
        for name in ("w_r", "w_s", "w_j", "w_p"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def from_preset(cls, name: str) -> "RewardWeights":
        try:
            return PRESETS[name.upper()]
        except KeyError:
            raise ValueError(
                f"unknown reward preset {name!r}; expected one of {sorted(PRESETS)}"
            ) from None


PRESETS: Mapping[str, RewardWeights] = {
    "RF1": RewardWeights(1.0, 0.0, 0.0, 0.0),
    "RF2": RewardWeights(1.0, 1.0, 0.0, 0.0),
    "RF3": RewardWeights(1.0, 2.0, 0.0, 0.0),
    "RF4": RewardWeights(1.0, 2.0, 1.0, 0.0),
    "RF5": RewardWeights(1.0, 2.0, 1.0, 1.0),
}


@dataclass
class RewardContext:
    """Inputs of a single reward evaluation.

    ``delta_t`` and ``delta_prev`` are the executed displacement commands of
    the current and previous step; on the first step ``delta_prev`` is
    initialised to ``delta_t`` so the jerk term starts at zero.
    """

    p_r: np.ndarray
    p_h: np.ndarray
    contact: bool
    f_n: float
    f_tau: float
    delta_t: np.ndarray
    delta_prev: np.ndarray
    contact_bonus: float = DEFAULT_CONTACT_BONUS


def reach_reward(ctx: RewardContext) -> float:
    """Contact bonus at the grasp event, else negative distance to hand."""
    if ctx.contact:
        return ctx.contact_bonus
    return -float(np.linalg.norm(np.asarray(ctx.p_r) - np.asarray(ctx.p_h)))


def safety_reward(ctx: RewardContext) -> float:
    """Linear force credit: +f_tau at zero-force contact, 0 at the
    threshold, negative beyond it.  Zero when there is no contact."""
    if ctx.f_n < 0:
        raise ValueError("contact force must be non-negative")
    if not ctx.contact:
        return 0.0
    if ctx.f_n <= ctx.f_tau:
        return ctx.f_tau * (1.0 - ctx.f_n / ctx.f_tau)
    return -(ctx.f_n - ctx.f_tau)


def jerk_reward(ctx: RewardContext) -> float:
    """Penalty on the change between consecutive displacement commands."""
    diff = np.asarray(ctx.delta_t) - np.asarray(ctx.delta_prev)
    return -float(np.linalg.norm(diff))


def proximity_reward(ctx: RewardContext) -> float:
    """Step-size credit scaled by relative distance to the hand."""
    p_h_norm = float(np.linalg.norm(np.asarray(ctx.p_h)))
    if p_h_norm == 0.0:
        raise ValueError("hand at the origin: proximity term undefined")
    dist = float(np.linalg.norm(np.asarray(ctx.p_r) - np.asarray(ctx.p_h)))
    return (dist / p_h_norm) * float(np.linalg.norm(np.asarray(ctx.delta_t)))


def total_reward(ctx: RewardContext, weights: RewardWeights) -> float:
    """Weighted sum of the four terms."""
    return (
        weights.w_r * reach_reward(ctx)
        + weights.w_s * safety_reward(ctx)
        + weights.w_j * jerk_reward(ctx)
        + weights.w_p * proximity_reward(ctx)
    )
