"""Small deterministic chain MDP used to validate the learning machinery."""
from __future__ import annotations

import numpy as np

from modelock.env import StepResult


class ChainMDP:
    """States ``0..n-1`` on a line; action 0 moves left, 1 moves right.

    Entering the rightmost state pays ``goal_reward`` and ends the episode.
    Moving left from state 0 stays there and pays ``stay_reward``. Episodes
    are truncated after ``max_steps`` (truncation is not terminal).
    """

    n_actions = 2

    def __init__(self, n_states: int = 5, goal_reward: float = 1.0, stay_reward: float = 0.1,
                 max_steps: int = 20, start: int = 0):
        if n_states < 2:
            raise ValueError("need at least two states")
        self.n_states = n_states
        self.goal_reward = goal_reward
        self.stay_reward = stay_reward
        self.max_steps = max_steps
        self.start = start
        self.state = start
        self.t = 0
        self.done = True

    @property
    def obs_len(self) -> int:
        return self.n_states

    def observation_layout(self) -> tuple[int, int, int]:
        return 0, 0, self.n_states

    def tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(next_state, reward, terminal) arrays for value iteration."""
        n = self.n_states
        nxt = np.zeros((n, 2), dtype=np.int64)
        rew = np.zeros((n, 2))
        for s in range(n):
            nxt[s, 0] = max(s - 1, 0)
            nxt[s, 1] = min(s + 1, n - 1)
            rew[s, 0] = self.stay_reward if s == 0 else 0.0
            rew[s, 1] = self.goal_reward if s + 1 == n - 1 else 0.0
        terminal = np.zeros(n, dtype=bool)
        terminal[-1] = True
        return nxt, rew, terminal

    def encode(self, s: int) -> np.ndarray:
        x = np.zeros(self.n_states)
        x[s] = 1.0
        return x

    def reset(self, start: int | None = None) -> np.ndarray:
        self.state = self.start if start is None else int(start)
        self.t = 0
        self.done = False
        return self.encode(self.state)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise RuntimeError("episode is done; call reset() first")
        if action not in (0, 1):
            raise ValueError(f"action {action} out of range [0, 2)")
        nxt, rew, terminal = self.tables()
        r = float(rew[self.state, action])
        self.state = int(nxt[self.state, action])
        self.t += 1
        term = bool(terminal[self.state])
        self.done = term or self.t >= self.max_steps
        return StepResult(self.encode(self.state), r, self.done,
                          {"raw_reward": r, "terminal": term, "ctrl": None})
