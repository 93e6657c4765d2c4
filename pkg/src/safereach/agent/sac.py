"""Off-policy entropy-regularised actor-critic trainer.

Standard recipe: twin Q critics with Polyak-averaged targets, a squashed
Gaussian actor, automatic temperature tuning toward a target entropy of
minus the action dimension, one gradient update per environment step, and
uniform minibatches from a FIFO replay buffer.  Training always runs
unshielded; the shield is a deployment-time filter and needs no retraining.

Everything stochastic is derived from a single integer seed: environment
resets, exploration warm-up, action sampling, minibatch indices and weight
initialisation.  Re-running with the same seed and config reproduces the
learning curve exactly (single-threaded torch).
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from sklearn.base import BaseEstimator

from ..env import EnvConfig, ReachEnv
from ..rewards import DEFAULT_CONTACT_BONUS, RewardContext, RewardWeights, total_reward
from .checkpoint import PolicyParams, save_policy
from .networks import (
    ACT_DIM,
    QCritic,
    SquashedGaussianActor,
    flat_parameters,
    load_flat_parameters,
)
from .replay import ReplayBuffer


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; the offending seed is aborted."""


@dataclass(frozen=True)
class AgentConfig:
    """Trainer hyperparameters (desk-scale defaults)."""

    gamma: float = 0.99
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_temperature: float = 3e-4
    batch_size: int = 256
    tau_polyak: float = 0.005
    buffer_capacity: int = 100_000
    updates_per_step: int = 1
    hidden_sizes: Tuple[int, ...] = (256, 256)
    total_env_steps: int = 150_000
    start_steps: int = 1_000
    target_entropy: Optional[float] = None  # None -> -action_dim
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.tau_polyak <= 1.0:
            raise ValueError("tau_polyak must lie in [0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size must not exceed buffer_capacity")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be positive")
        if self.updates_per_step < 0 or self.total_env_steps < 0 or self.start_steps < 0:
            raise ValueError("step counts must be non-negative")
        if not self.hidden_sizes:
            raise ValueError("at least one hidden layer is required")

    def agent_kwargs(self) -> dict:
        return {
            "gamma": self.gamma,
            "lr_actor": self.lr_actor,
            "lr_critic": self.lr_critic,
            "lr_temperature": self.lr_temperature,
            "batch_size": self.batch_size,
            "tau_polyak": self.tau_polyak,
            "buffer_capacity": self.buffer_capacity,
            "updates_per_step": self.updates_per_step,
            "hidden_sizes": self.hidden_sizes,
            "total_env_steps": self.total_env_steps,
            "start_steps": self.start_steps,
            "target_entropy": self.target_entropy,
        }


class TorchPolicy:
    """Rollout adapter around a trained actor.

    Stochastic draws use the caller's numpy generator, so rollouts are
    reproducible from their seed alone regardless of torch RNG state.
    """

    def __init__(self, actor: SquashedGaussianActor) -> None:
        self.actor = actor
        self.actor.eval()

    @classmethod
    def from_params(cls, params: PolicyParams) -> "TorchPolicy":
        actor = SquashedGaussianActor.from_arch_descriptor(params.arch)
        load_flat_parameters(actor, torch.from_numpy(params.values))
        return cls(actor)

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        with torch.no_grad():
            t = torch.as_tensor(np.asarray(obs, dtype=np.float32)).unsqueeze(0)
            mu, log_std = self.actor(t)
            if deterministic:
                a = self.actor.act_scale * torch.tanh(mu)
            else:
                noise = torch.as_tensor(rng.standard_normal(mu.shape[-1]).astype(np.float32))
                a = self.actor.act_scale * torch.tanh(mu + log_std.exp() * noise)
        a = a.squeeze(0).numpy().astype(float)
        if not np.all(np.isfinite(a)):
            snapshot = flat_parameters(self.actor).numpy()
            raise RuntimeError(
                "policy produced a non-finite action; "
                f"obs={np.asarray(obs)!r}, param_norm={float(np.linalg.norm(snapshot)):.6g}"
            )
        return a


class SacAgent(BaseEstimator):
    """Soft actor-critic estimator.

    ``fit(env, reward_weights)`` runs one seeded training loop on the given
    environment; ``predict`` maps observations to mean actions.  Constructor
    arguments follow the estimator convention (stored verbatim, validated at
    fit time) so ``get_params`` / ``set_params`` and cloning work.
    """

    def __init__(
        self,
        gamma: float = 0.99,
        lr_actor: float = 3e-4,
        lr_critic: float = 3e-4,
        lr_temperature: float = 3e-4,
        batch_size: int = 256,
        tau_polyak: float = 0.005,
        buffer_capacity: int = 100_000,
        updates_per_step: int = 1,
        hidden_sizes: Tuple[int, ...] = (256, 256),
        total_env_steps: int = 150_000,
        start_steps: int = 1_000,
        target_entropy: Optional[float] = None,
        seed: int = 0,
    ) -> None:
        self.gamma = gamma
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.lr_temperature = lr_temperature
        self.batch_size = batch_size
        self.tau_polyak = tau_polyak
        self.buffer_capacity = buffer_capacity
        self.updates_per_step = updates_per_step
        self.hidden_sizes = hidden_sizes
        self.total_env_steps = total_env_steps
        self.start_steps = start_steps
        self.target_entropy = target_entropy
        self.seed = seed

    # ------------------------------------------------------------- setup
    def _setup(self, act_scale: float) -> None:
        torch.set_num_threads(1)  # keeps runs reproducible and avoids oversubscription
        torch.manual_seed(self.seed)
        self.actor_ = SquashedGaussianActor(self.hidden_sizes, act_scale)
        self.q1_ = QCritic(self.hidden_sizes)
        self.q2_ = QCritic(self.hidden_sizes)
        self.q1_target_ = QCritic(self.hidden_sizes)
        self.q2_target_ = QCritic(self.hidden_sizes)
        self.q1_target_.load_state_dict(self.q1_.state_dict())
        self.q2_target_.load_state_dict(self.q2_.state_dict())
        for p in self.q1_target_.parameters():
            p.requires_grad_(False)
        for p in self.q2_target_.parameters():
            p.requires_grad_(False)
        self.log_alpha_ = torch.zeros(1, requires_grad=True)
        self.target_entropy_ = (
            float(self.target_entropy) if self.target_entropy is not None else -float(ACT_DIM)
        )
        self.actor_opt_ = torch.optim.Adam(self.actor_.parameters(), lr=self.lr_actor)
        self.critic_opt_ = torch.optim.Adam(
            list(self.q1_.parameters()) + list(self.q2_.parameters()), lr=self.lr_critic
        )
        self.alpha_opt_ = torch.optim.Adam([self.log_alpha_], lr=self.lr_temperature)
        self.buffer_ = ReplayBuffer(self.buffer_capacity)
        self.curve_: List[dict] = []
        self._policy_ = TorchPolicy(self.actor_)

    # ------------------------------------------------------------- losses
    def _critic_loss(self, batch: Dict[str, torch.Tensor],
                     next_noise: Optional[torch.Tensor] = None) -> torch.Tensor:
        with torch.no_grad():
            a_next, logp_next = self.actor_.sample(batch["s_next"], noise=next_noise)
            q_next = torch.min(
                self.q1_target_(batch["s_next"], a_next),
                self.q2_target_(batch["s_next"], a_next),
            )
            alpha = self.log_alpha_.exp()
            target = batch["r"] + self.gamma * (1.0 - batch["done"]) * (
                q_next - alpha * logp_next
            )
        q1 = self.q1_(batch["s"], batch["a"])
        q2 = self.q2_(batch["s"], batch["a"])
        return ((q1 - target) ** 2).mean() + ((q2 - target) ** 2).mean()

    def _actor_loss(self, batch: Dict[str, torch.Tensor],
                    noise: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        a, logp = self.actor_.sample(batch["s"], noise=noise)
        q = torch.min(self.q1_(batch["s"], a), self.q2_(batch["s"], a))
        alpha = self.log_alpha_.exp().detach()
        return (alpha * logp - q).mean(), logp

    def _temperature_loss(self, logp: torch.Tensor) -> torch.Tensor:
        return -(self.log_alpha_ * (logp.detach() + self.target_entropy_)).mean()

    def _polyak(self) -> None:
        tau = self.tau_polyak
        with torch.no_grad():
            for target, online in (
                (self.q1_target_, self.q1_),
                (self.q2_target_, self.q2_),
            ):
                for tp, p in zip(target.parameters(), online.parameters()):
                    tp.mul_(1.0 - tau).add_(tau * p)

    def update_step(self, rng: np.random.Generator) -> Dict[str, float]:
        """One critic + actor + temperature update on a sampled minibatch."""
        if len(self.buffer_) < self.batch_size:
            raise ValueError(
                f"buffer holds {len(self.buffer_)} transitions, need at least {self.batch_size}"
            )
        raw = self.buffer_.sample(self.batch_size, rng)
        batch = {
            "s": torch.as_tensor(raw["s"]),
            "a": torch.as_tensor(raw["a"]),
            "r": torch.as_tensor(raw["r"]).unsqueeze(-1),
            "s_next": torch.as_tensor(raw["s_next"]),
            "done": torch.as_tensor(raw["done"]).unsqueeze(-1),
        }

        critic_loss = self._critic_loss(batch)
        self.critic_opt_.zero_grad()
        critic_loss.backward()
        self.critic_opt_.step()

        for p in self.q1_.parameters():
            p.requires_grad_(False)
        for p in self.q2_.parameters():
            p.requires_grad_(False)
        actor_loss, logp = self._actor_loss(batch)
        self.actor_opt_.zero_grad()
        actor_loss.backward()
        self.actor_opt_.step()
        for p in self.q1_.parameters():
            p.requires_grad_(True)
        for p in self.q2_.parameters():
            p.requires_grad_(True)

        alpha_loss = self._temperature_loss(logp)
        self.alpha_opt_.zero_grad()
        alpha_loss.backward()
        self.alpha_opt_.step()

        self._polyak()

        losses = {
            "critic_loss": float(critic_loss.detach()),
            "actor_loss": float(actor_loss.detach()),
            "temperature_loss": float(alpha_loss.detach()),
            "alpha": float(self.log_alpha_.detach().exp()),
        }
        if not all(np.isfinite(v) for v in losses.values()):
            raise TrainingDiverged(f"non-finite losses at update: {losses}")
        return losses

    # ------------------------------------------------------------- acting
    def select_action(self, obs: np.ndarray, rng: np.random.Generator,
                      deterministic: bool = False) -> np.ndarray:
        return self._policy_.act(obs, rng, deterministic=deterministic)

    def predict(self, X: np.ndarray, deterministic: bool = True) -> np.ndarray:
        """Mean actions for a batch of observations (or one observation)."""
        X = np.asarray(X, dtype=np.float32)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        with torch.no_grad():
            if deterministic:
                a = self.actor_.mean_action(torch.as_tensor(X))
            else:
                a, _ = self.actor_.sample(torch.as_tensor(X))
        out = a.numpy().astype(float)
        return out[0] if single else out

    def policy_params(self) -> PolicyParams:
        values = flat_parameters(self.actor_).numpy().astype(np.float32)
        return PolicyParams(arch=self.actor_.arch_descriptor(), values=values)

    def as_policy(self) -> TorchPolicy:
        return TorchPolicy(self.actor_)

    # ------------------------------------------------------------- training
    def fit(
        self,
        env: ReachEnv,
        reward_weights: RewardWeights,
        contact_bonus: float = DEFAULT_CONTACT_BONUS,
    ) -> "SacAgent":
        cfg = env.config
        self._setup(act_scale=cfg.delta_max)

        ss = np.random.SeedSequence(self.seed)
        env_seed_rng, action_rng, batch_rng = (
            np.random.default_rng(child) for child in ss.spawn(3)
        )

        state = env.reset(int(env_seed_rng.integers(2**63)))
        delta_prev: Optional[np.ndarray] = None
        ep_return, ep_len, ep_index = 0.0, 0, 0

        for step in range(self.total_env_steps):
            obs = state.observation()
            if step < self.start_steps:
                action = action_rng.uniform(-cfg.delta_max, cfg.delta_max, size=ACT_DIM)
            else:
                action = self.select_action(obs, action_rng, deterministic=False)

            result = env.step(action)
            executed = result.executed_delta
            prev = executed if delta_prev is None else delta_prev
            ctx = RewardContext(
                p_r=result.state.p_r,
                p_h=result.state.p_h,
                contact=result.done,
                f_n=result.contact.f_n if result.contact else 0.0,
                f_tau=cfg.f_tau,
                delta_t=executed,
                delta_prev=prev,
                contact_bonus=contact_bonus,
            )
            reward = total_reward(ctx, reward_weights)
            # Truncation is not terminal: bootstrap through it.
            self.buffer_.add(obs, action, reward, result.state.observation(), result.done)
            delta_prev = executed
            ep_return += reward
            ep_len += 1

            if len(self.buffer_) >= self.batch_size:
                for _ in range(self.updates_per_step):
                    self.update_step(batch_rng)

            if result.done or result.truncated:
                self.curve_.append(
                    {
                        "seed": self.seed,
                        "episode": ep_index,
                        "steps": step + 1,
                        "return": ep_return,
                        "length": ep_len,
                    }
                )
                ep_index += 1
                ep_return, ep_len = 0.0, 0
                state = env.reset(int(env_seed_rng.integers(2**63)))
                delta_prev = None
            else:
                state = result.state
        return self


# ----------------------------------------------------------------- multi-seed
@dataclass
class SeedResult:
    seed: int
    params: Optional[PolicyParams]
    curve: List[dict]
    error: Optional[str] = None


def _train_one_seed(args) -> SeedResult:
    env_cfg, weights, agent_kwargs, contact_bonus, seed = args
    agent = SacAgent(seed=seed, **agent_kwargs)
    try:
        agent.fit(ReachEnv(env_cfg), weights, contact_bonus=contact_bonus)
    except TrainingDiverged as exc:
        return SeedResult(seed=seed, params=None, curve=getattr(agent, "curve_", []),
                          error=str(exc))
    return SeedResult(seed=seed, params=agent.policy_params(), curve=agent.curve_)


def train(
    env_cfg: EnvConfig,
    reward_weights: RewardWeights,
    agent_cfg: AgentConfig,
    seeds: Optional[Sequence[int]] = None,
    contact_bonus: float = DEFAULT_CONTACT_BONUS,
    out_dir: str | Path | None = None,
    label: str = "policy",
    workers: int = 1,
) -> Dict[int, SeedResult]:
    """Train one policy per seed; persist checkpoints and learning curves.

    Diverged seeds are reported with their diagnostic and do not stop the
    remaining seeds.  With ``out_dir`` set, each surviving seed's policy is
    written to ``checkpoints/<label>_seed<k>.pol`` and all episode records
    to ``curves.csv``; results are keyed and merged by seed so the output
    does not depend on ``workers``.
    """
    seeds = list(seeds if seeds is not None else agent_cfg.seeds)
    jobs = [(env_cfg, reward_weights, agent_cfg.agent_kwargs(), contact_bonus, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one_seed, jobs))
    else:
        results = [_train_one_seed(job) for job in jobs]
    by_seed = {r.seed: r for r in results}

    if out_dir is not None:
        out = Path(out_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        for seed in seeds:
            r = by_seed[seed]
            if r.params is not None:
                save_policy(r.params, out / "checkpoints" / f"{label}_seed{seed}.pol")
        write_curves(out / "curves.csv", [by_seed[s] for s in seeds])
    return by_seed


def write_curves(path: str | Path, results: Sequence[SeedResult]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "episode", "steps", "return", "length"])
        for r in results:
            for row in r.curve:
                writer.writerow(
                    [row["seed"], row["episode"], row["steps"],
                     format(row["return"], ".17g"), row["length"]]
                )


def curve_summary(results: Dict[int, SeedResult], tail: int = 20) -> Dict[str, float]:
    """Mean and standard deviation across seeds of the tail-episode return."""
    tails = []
    for r in results.values():
        if r.error is not None or not r.curve:
            continue
        returns = [row["return"] for row in r.curve[-tail:]]
        tails.append(float(np.mean(returns)))
    if not tails:
        return {"return_mean": float("nan"), "return_std": float("nan"), "n_seeds": 0}
    return {
        "return_mean": float(np.mean(tails)),
        "return_std": float(np.std(tails)),
        "n_seeds": len(tails),
    }
