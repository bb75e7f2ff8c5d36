"""Episodic discrete-action environment around the laser cavity."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from modelock.cavity import (ANGLE_NAMES, BlowUpError, CavityConfig, ControlState,
                             FieldPair, sech_pulse, settle)
from modelock.objective import RewardConfig, rescale, reward

OBS_MODES = ("magnitude", "complex")


@dataclass(frozen=True)
class EnvConfig:
    """Environment settings.

    ``initial_range`` maps angle names to ``(lo, hi)`` intervals in degrees;
    listed angles are drawn uniformly at every reset instead of taken from
    ``initial_ctrl``.
    """

    cavity: CavityConfig = field(default_factory=lambda: CavityConfig(n_z_steps=40))
    initial_ctrl: ControlState = field(default_factory=ControlState)
    initial_amps: tuple[float, float] = (1.0, 1.0)
    controlled_angles: tuple[str, ...] = ("alpha1",)
    step_deg: float = 2.0
    trips_per_step: int = 10
    episode_len: int = 50
    reward_cfg: RewardConfig = field(default_factory=RewardConfig)
    obs_points: int = 128
    obs_mode: str = "magnitude"
    initial_range: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        ca = tuple(self.controlled_angles)
        if not 1 <= len(ca) <= 4:
            raise ValueError("between 1 and 4 controlled angles required")
        if len(set(ca)) != len(ca) or not set(ca) <= set(ANGLE_NAMES):
            raise ValueError(f"controlled_angles must be distinct names from {ANGLE_NAMES}")
        if not self.step_deg > 0:
            raise ValueError("step_deg must be positive")
        if self.episode_len < 1 or self.trips_per_step < 1:
            raise ValueError("episode_len and trips_per_step must be >= 1")
        if self.obs_mode not in OBS_MODES:
            raise ValueError(f"obs_mode must be one of {OBS_MODES}")
        if self.obs_points < 1 or self.cavity.grid.n % self.obs_points:
            raise ValueError(f"obs_points ({self.obs_points}) must divide n ({self.cavity.grid.n})")
        for name, (lo, hi) in self.initial_range.items():
            if name not in ANGLE_NAMES or not lo <= hi:
                raise ValueError(f"bad initial range for {name!r}")
        object.__setattr__(self, "controlled_angles", ca)
        object.__setattr__(self, "initial_amps", tuple(float(a) for a in self.initial_amps))

    @property
    def n_controls(self) -> int:
        return len(self.controlled_angles)

    @property
    def n_actions(self) -> int:
        return 3 ** self.n_controls

    @property
    def n_channels(self) -> int:
        return 2 if self.obs_mode == "magnitude" else 4

    @property
    def obs_len(self) -> int:
        return self.n_channels * self.obs_points + self.n_controls

    def with_birefringence(self, K: float) -> "EnvConfig":
        return replace(self, cavity=self.cavity.with_birefringence(K))


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def action_table(n_controls: int) -> np.ndarray:
    """Rows of per-angle increments in {-1, 0, +1}, lexicographic order."""
    return np.array(list(itertools.product((-1, 0, 1), repeat=n_controls)), dtype=np.int64)


def hold_action(n_controls: int) -> int:
    return (3 ** n_controls - 1) // 2


def encode_observation(fields: FieldPair, ctrl: ControlState, cfg: EnvConfig) -> np.ndarray:
    """Block-averaged field samples followed by the controlled angles / 180."""
    m = cfg.obs_points
    n = fields.grid.n
    if n % m:
        raise ValueError(f"obs_points ({m}) must divide n ({n})")
    if cfg.obs_mode == "magnitude":
        chans = [np.abs(fields.u), np.abs(fields.v)]
    else:
        chans = [fields.u.real, fields.u.imag, fields.v.real, fields.v.imag]
    parts = [c.reshape(m, n // m).mean(axis=1) for c in chans]
    ang = np.array([ctrl.get(a) for a in cfg.controlled_angles])
    parts.append((np.mod(ang + 180.0, 360.0) - 180.0) / 180.0)
    return np.concatenate(parts)


class LaserEnv:
    """Cavity fields persist across steps; each action nudges the angles.

    Angles are tracked as the episode's initial value plus an integer
    offset times ``step_deg``, so repeated steps never accumulate rounding.
    """

    def __init__(self, cfg: EnvConfig, seed: int | None = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self._actions = action_table(cfg.n_controls)
        self.fields: FieldPair | None = None
        self.ctrl: ControlState | None = None
        self._origin: ControlState | None = None
        self._offsets = np.zeros(cfg.n_controls, dtype=np.int64)
        self.step_index = 0
        self.done = True
        self.trace: list[dict] = []

    @property
    def n_actions(self) -> int:
        return self.cfg.n_actions

    @property
    def obs_len(self) -> int:
        return self.cfg.obs_len

    def observation_layout(self) -> tuple[int, int, int]:
        """(field channels, points per channel, trailing angle entries)."""
        return self.cfg.n_channels, self.cfg.obs_points, self.cfg.n_controls

    def set_birefringence(self, K: float) -> None:
        """Change K in place; fields and angles are kept (a disturbance)."""
        self.cfg = self.cfg.with_birefringence(K)

    def initial_control(self) -> ControlState:
        ctrl = self.cfg.initial_ctrl
        if self.cfg.initial_range:
            draws = {name: self.rng.uniform(lo, hi) for name, (lo, hi) in
                     sorted(self.cfg.initial_range.items())}
            ctrl = ctrl.with_angles(**draws)
        return ctrl

    def reset(self, ctrl: ControlState | None = None) -> np.ndarray:
        """Start a new episode from sech pulses; ``ctrl`` overrides sampling."""
        self._origin = ctrl if ctrl is not None else self.initial_control()
        self.ctrl = self._origin
        self._offsets[:] = 0
        self.fields = sech_pulse(self.cfg.cavity.grid, *self.cfg.initial_amps)
        self.step_index = 0
        self.done = False
        self.trace = []
        return self.observe()

    def observe(self) -> np.ndarray:
        return encode_observation(self.fields, self.ctrl, self.cfg)

    def _advance(self) -> tuple[float, bool]:
        try:
            self.fields = settle(self.fields, self.ctrl, self.cfg.cavity, self.cfg.trips_per_step)
        except BlowUpError:
            return self.cfg.reward_cfg.blowup_penalty, True
        return reward(self.fields, self.cfg.reward_cfg), False

    def step(self, action: int) -> StepResult:
        if self.done:
            raise RuntimeError("episode is done; call reset() first")
        if not 0 <= int(action) < self.n_actions:
            raise ValueError(f"action {action} out of range [0, {self.n_actions})")
        self._offsets += self._actions[int(action)]
        new = {name: self._origin.get(name) + self.cfg.step_deg * int(k)
               for name, k in zip(self.cfg.controlled_angles, self._offsets)}
        self.ctrl = self._origin.with_angles(**new)
        raw, blown = self._advance()
        self.step_index += 1
        self.done = blown or self.step_index >= self.cfg.episode_len
        scaled = rescale(raw, self.cfg.reward_cfg)
        self._log(int(action), raw, scaled)
        obs = np.zeros(self.obs_len) if blown else self.observe()
        return StepResult(obs, scaled, self.done,
                          {"raw_reward": raw, "ctrl": self.ctrl, "blowup": blown,
                           "terminal": blown})

    def apply_control(self, angles: Sequence[float] | Mapping[str, float],
                      n_trips: int | None = None) -> float:
        """Set controlled angles to absolute values, settle, return the raw reward.

        Used by the extremum-seeking loop; bypasses the episode step counter.
        """
        if self.fields is None:
            raise RuntimeError("call reset() first")
        if not isinstance(angles, Mapping):
            angles = dict(zip(self.cfg.controlled_angles, angles))
        self.ctrl = self.ctrl.with_angles(**angles)
        trips = n_trips or self.cfg.trips_per_step
        try:
            self.fields = settle(self.fields, self.ctrl, self.cfg.cavity, trips)
        except BlowUpError:
            self.done = True
            return self.cfg.reward_cfg.blowup_penalty
        return reward(self.fields, self.cfg.reward_cfg)

    def _log(self, action, raw, scaled):
        row = {"step": self.step_index, "action": action}
        row.update({name: self.ctrl.get(name) for name in ANGLE_NAMES})
        row.update(raw_reward=raw, rescaled_reward=scaled, done=int(self.done))
        self.trace.append(row)

    def write_trace_csv(self, path, comment: str | None = None) -> None:
        cols = ["step", "action", *ANGLE_NAMES, "raw_reward", "rescaled_reward", "done"]
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.trace:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def random_policy_rewards(cfg: EnvConfig, episodes: int, seed: int = 0) -> np.ndarray:
    """Raw rewards seen by a uniformly random policy (used for reward calibration)."""
    env = LaserEnv(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    out = []
    for _ in range(episodes):
        env.reset()
        while not env.done:
            out.append(env.step(int(rng.integers(env.n_actions))).info["raw_reward"])
    return np.array(out)
