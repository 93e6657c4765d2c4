"""Actor and critic networks for the off-policy trainer."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

OBS_DIM = 9
ACT_DIM = 3


def mlp(sizes: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class SquashedGaussianActor(nn.Module):
    """Gaussian policy squashed through tanh and scaled to the action bound.

    ``forward`` returns the pre-squash mean and clamped log standard
    deviation; ``sample`` draws a reparameterised action together with its
    log-probability (including the tanh change-of-variables correction).
    """

    def __init__(self, hidden_sizes: Sequence[int], act_scale: float,
                 obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM) -> None:
        super().__init__()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.act_scale = float(act_scale)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.net = mlp([obs_dim, *self.hidden_sizes, 2 * act_dim])

    def forward(self, obs: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        mu, log_std = self.net(obs).chunk(2, dim=-1)
        return mu, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, obs: torch.Tensor, noise: Optional[torch.Tensor] = None
               ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Reparameterised action and its log-probability.

        ``noise`` overrides the standard-normal draw; passing a fixed
        tensor makes the sample a deterministic function of the parameters,
        which the finite-difference gradient checks rely on.
        """
        mu, log_std = self(obs)
        std = log_std.exp()
        if noise is None:
            noise = torch.randn_like(mu)
        z = mu + std * noise
        logp = (-0.5 * ((z - mu) / std) ** 2 - log_std - 0.5 * torch.log(
            torch.tensor(2.0 * torch.pi, dtype=obs.dtype))).sum(-1, keepdim=True)
        squashed = torch.tanh(z)
        # Change of variables for a = scale * tanh(z).
        logp = logp - torch.log(self.act_scale * (1.0 - squashed.pow(2)) + 1e-6).sum(-1, keepdim=True)
        return self.act_scale * squashed, logp

    def mean_action(self, obs: torch.Tensor) -> torch.Tensor:
        mu, _ = self(obs)
        return self.act_scale * torch.tanh(mu)

    def arch_descriptor(self) -> dict:
        """Architecture metadata stored in checkpoints."""
        return {
            "kind": "squashed_gaussian_actor",
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": "relu",
            "act_scale": self.act_scale,
            "log_std_bounds": [LOG_STD_MIN, LOG_STD_MAX],
        }

    @classmethod
    def from_arch_descriptor(cls, arch: dict) -> "SquashedGaussianActor":
        if arch.get("kind") != "squashed_gaussian_actor":
            raise ValueError(f"unsupported architecture kind: {arch.get('kind')!r}")
        return cls(
            hidden_sizes=arch["hidden_sizes"],
            act_scale=arch["act_scale"],
            obs_dim=arch["obs_dim"],
            act_dim=arch["act_dim"],
        )


class QCritic(nn.Module):
    """State-action value network."""

    def __init__(self, hidden_sizes: Sequence[int],
                 obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM) -> None:
        super().__init__()
        self.net = mlp([obs_dim + act_dim, *hidden_sizes, 1])

    def forward(self, obs: torch.Tensor, act: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs, act], dim=-1))


def flat_parameters(module: nn.Module) -> torch.Tensor:
    """All parameters concatenated into one flat vector (registration order)."""
    return torch.cat([p.detach().reshape(-1) for p in module.parameters()])


def load_flat_parameters(module: nn.Module, flat: torch.Tensor) -> None:
    """Inverse of :func:`flat_parameters`."""
    offset = 0
    with torch.no_grad():
        for p in module.parameters():
            n = p.numel()
            p.copy_(flat[offset:offset + n].reshape(p.shape))
            offset += n
    if offset != flat.numel():
        raise ValueError(f"parameter count mismatch: module has {offset}, vector has {flat.numel()}")
