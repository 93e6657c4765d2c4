"""Cross-entropy method over a linear policy.

Gradient-free sanity trainer: if this cannot reach the hand with a 30
parameter policy, the environment or reward is broken, independent of
anything the actor-critic stack does.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..env import EnvConfig, ReachEnv, distance_to_goal
from ..policies import LinearPolicy
from ..rewards import DEFAULT_CONTACT_BONUS, RewardContext, RewardWeights, total_reward


@dataclass(frozen=True)
class CemConfig:
    population: int = 64
    elite_frac: float = 0.125
    iterations: int = 200
    sigma0: float = 0.5
    sigma_floor: float = 0.02
    episodes_per_candidate: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.population:
            raise ValueError("population must be positive")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ValueError("elite_frac must lie in (0, 1]")
        if self.iterations < 0 or self.episodes_per_candidate < 1:
            raise ValueError("iterations must be >= 0 and episodes_per_candidate >= 1")

    @property
    def n_elite(self) -> int:
        return max(1, int(round(self.elite_frac * self.population)))


def episode_return(
    policy, env: ReachEnv, seed: int, weights: RewardWeights,
    contact_bonus: float = DEFAULT_CONTACT_BONUS,
) -> tuple[float, bool]:
    """Roll one deterministic episode and return (total reward, success)."""
    state = env.reset(seed)
    rng = np.random.default_rng(seed)
    total = 0.0
    delta_prev: Optional[np.ndarray] = None
    while True:
        action = policy.act(state.observation(), rng, deterministic=True)
        result = env.step(action)
        executed = result.executed_delta
        prev = executed if delta_prev is None else delta_prev
        ctx = RewardContext(
            p_r=result.state.p_r,
            p_h=result.state.p_h,
            contact=result.done,
            f_n=result.contact.f_n if result.contact else 0.0,
            f_tau=env.config.f_tau,
            delta_t=executed,
            delta_prev=prev,
            contact_bonus=contact_bonus,
        )
        total += total_reward(ctx, weights)
        delta_prev = executed
        if result.done or result.truncated:
            return total, result.done
        state = result.state


def cem_update(
    mu: np.ndarray,
    sigma: np.ndarray,
    samples: np.ndarray,
    scores: np.ndarray,
    n_elite: int,
    sigma_floor: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Refit the search distribution on the elite samples.

    Selecting the whole population as elites carries no information, so
    that degenerate case leaves the distribution unchanged.
    """
    if n_elite >= len(samples):
        return mu, sigma
    elite = samples[np.argsort(scores)[-n_elite:]]
    return elite.mean(axis=0), np.maximum(elite.std(axis=0), sigma_floor)


def train_cem(
    env_cfg: EnvConfig,
    reward_weights: RewardWeights,
    cem_cfg: CemConfig,
    callback: Optional[Callable[[int, float, float], None]] = None,
) -> LinearPolicy:
    """Fit a linear policy by iterated elite refitting.

    Candidate scores are the mean episodic reward over a fixed set of
    evaluation seeds, so the objective is deterministic given the config.
    """
    rng = np.random.default_rng(cem_cfg.seed)
    env = ReachEnv(env_cfg)
    dim = 30
    mu = np.zeros(dim)
    sigma = np.full(dim, cem_cfg.sigma0)
    eval_seeds = [int(s) for s in rng.integers(2**31, size=cem_cfg.episodes_per_candidate)]

    def score(theta: np.ndarray) -> float:
        policy = LinearPolicy.from_flat(theta, env_cfg.delta_max)
        returns = [
            episode_return(policy, env, seed, reward_weights)[0] for seed in eval_seeds
        ]
        return float(np.mean(returns))

    best_theta = mu.copy()
    best_score = score(best_theta)
    for iteration in range(cem_cfg.iterations):
        samples = mu + sigma * rng.standard_normal((cem_cfg.population, dim))
        scores = np.array([score(theta) for theta in samples])
        mu, sigma = cem_update(mu, sigma, samples, scores, cem_cfg.n_elite,
                               cem_cfg.sigma_floor)
        top = int(np.argmax(scores))
        if scores[top] > best_score:
            best_score = float(scores[top])
            best_theta = samples[top].copy()
        if callback is not None:
            callback(iteration, float(scores[top]), best_score)
    return LinearPolicy.from_flat(best_theta, env_cfg.delta_max)
