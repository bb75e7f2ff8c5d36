"""Fixed-capacity experience replay with oldest-first eviction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    index: np.ndarray


class ReplayBuffer:
    """Ring buffer of transitions stored in preallocated arrays."""

    def __init__(self, capacity: int, obs_len: int, warmup: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_len = int(obs_len)
        self.warmup = int(warmup)
        self.s = np.zeros((capacity, obs_len))
        self.s_next = np.zeros((capacity, obs_len))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0  # next slot to write

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        s = np.asarray(t.s, dtype=float)
        s_next = np.asarray(t.s_next, dtype=float)
        if s.shape != (self.obs_len,) or s_next.shape != (self.obs_len,):
            raise ValueError(f"observation length must be {self.obs_len}")
        i = self._head
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.done[i] = s, t.a, t.r, s_next, t.done
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = self._head if self.size == self.capacity else 0
        idx = [(start + k) % self.capacity for k in range(self.size)]
        return [Transition(self.s[i].copy(), int(self.a[i]), float(self.r[i]),
                           self.s_next[i].copy(), bool(self.done[i])) for i in idx]

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement."""
        if self.size < max(batch_size, self.warmup, 1):
            raise ValueError(f"buffer below warmup threshold ({self.size} stored, "
                             f"need {max(batch_size, self.warmup)})")
        idx = rng.integers(self.size, size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx], idx)


def replay_push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t)


def replay_sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(batch_size, rng)
