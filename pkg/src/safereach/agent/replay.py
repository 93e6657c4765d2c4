"""FIFO replay buffer with uniform minibatch sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


class ReplayBuffer:
    """Ring buffer over transitions.

    Oldest entries are evicted first once capacity is reached.  ``sample``
    draws a minibatch uniformly without replacement within the batch, using
    the generator passed by the caller so all randomness stays seeded.
    """

    def __init__(self, capacity: int, obs_dim: int = 9, act_dim: int = 3) -> None:
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = int(capacity)
        self._s = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._a = np.zeros((capacity, act_dim), dtype=np.float32)
        self._r = np.zeros(capacity, dtype=np.float32)
        self._s_next = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._done = np.zeros(capacity, dtype=np.float32)
        self._index = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s: np.ndarray, a: np.ndarray, r: float, s_next: np.ndarray, done: bool) -> None:
        i = self._index
        self._s[i] = s
        self._a[i] = a
        self._r[i] = r
        self._s_next[i] = s_next
        self._done[i] = float(done)
        self._index = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from buffer of size {self._size}")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return {
            "s": self._s[idx],
            "a": self._a[idx],
            "r": self._r[idx],
            "s_next": self._s_next[idx],
            "done": self._done[idx],
        }

    def contents(self) -> Dict[str, np.ndarray]:
        """Stored transitions in insertion order (oldest first); test hook."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = np.roll(np.arange(self.capacity), -self._index)
        return {
            "s": self._s[order].copy(),
            "a": self._a[order].copy(),
            "r": self._r[order].copy(),
            "s_next": self._s_next[order].copy(),
            "done": self._done[order].copy(),
        }
