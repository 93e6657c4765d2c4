"""Scripted displacement policies.

A policy maps a 9-vector observation ``[p_r, p_h, v_r]`` to a 3-vector
displacement command via ``act(obs, rng, deterministic)``.  The scripted
policies here drive environment sanity checks and the shield stress tests;
the learned policy lives in :mod:`safereach.agent`.
"""
from __future__ import annotations

import numpy as np


class ZeroPolicy:
    """Never moves."""

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        return np.zeros(3)


class ConstantPolicy:
    """Always returns the same displacement command."""

    def __init__(self, delta: np.ndarray) -> None:
        self.delta = np.asarray(delta, dtype=float).reshape(3)

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        return self.delta.copy()


class MaxSpeedPolicy:
    """Full-speed dash at the hand, optionally with directional jitter.

    Every command has norm ``delta_max``, so the raw stream stays over the
    energy budget whenever ``delta_max / dt`` exceeds the budget speed.
    ``jitter`` scales zero-mean Gaussian noise mixed into the direction in
    stochastic mode; deterministic mode is the pure greedy dash.
    """

    def __init__(self, delta_max: float, jitter: float = 0.5) -> None:
        self.delta_max = float(delta_max)
        self.jitter = float(jitter)

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        p_r, p_h = obs[0:3], obs[3:6]
        direction = p_h - p_r
        if not deterministic and self.jitter > 0.0:
            direction = direction + self.jitter * np.linalg.norm(direction) * rng.standard_normal(3)
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            return np.zeros(3)
        return self.delta_max * direction / norm


class LinearPolicy:
    """Tanh-squashed linear policy, the search space of the CEM trainer."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, delta_max: float) -> None:
        self.weights = np.asarray(weights, dtype=float).reshape(3, 9)
        self.bias = np.asarray(bias, dtype=float).reshape(3)
        self.delta_max = float(delta_max)

    @classmethod
    def from_flat(cls, theta: np.ndarray, delta_max: float) -> "LinearPolicy":
        theta = np.asarray(theta, dtype=float).reshape(30)
        return cls(theta[:27].reshape(3, 9), theta[27:], delta_max)

    @property
    def n_params(self) -> int:
        return 30

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        return self.delta_max * np.tanh(self.weights @ obs + self.bias)
