"""Extremum-seeking stabilizer and the RL-to-ESC hybrid controller.

Each step the plant is probed at ``nominal + a*sin(w*k)``. The measured
objective is passed through a first-order washout (high-pass) filter,
demodulated by the same sinusoid, and integrated into the nominal angles.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from modelock.dqn.network import QNetwork, forward
from modelock.env import LaserEnv, action_table
from modelock.objective import reward as raw_reward


@dataclass(frozen=True)
class EscConfig:
    """Per-channel dither and integration settings (angles in degrees).

    ``highpass`` is the washout coefficient in (0, 1]: the filter tracks the
    objective's running mean with that smoothing weight and outputs the
    deviation from it.
    """

    amplitude: tuple[float, ...] = (0.5,)
    omega: tuple[float, ...] = (0.5 * math.pi,)
    highpass: float = 0.2
    gain: float = 0.05
    clamp: float = 0.5

    def __post_init__(self):
        amp = tuple(float(a) for a in np.atleast_1d(self.amplitude))
        om = tuple(float(w) for w in np.atleast_1d(self.omega))
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "omega", om)
        if len(amp) != len(om):
            raise ValueError("amplitude and omega need one entry per channel")
        if any(not a > 0 for a in amp):
            raise ValueError("dither amplitudes must be positive")
        if any(not 0 < w < math.pi for w in om):
            raise ValueError("dither frequencies must lie in (0, pi) rad/step")
        if len(set(om)) != len(om):
            raise ValueError("dither frequencies must be pairwise distinct")
        if not 0 < self.highpass <= 1:
            raise ValueError("highpass must lie in (0, 1]")
        if not self.clamp > 0:
            raise ValueError("clamp must be positive")

    @property
    def n_channels(self) -> int:
        return len(self.amplitude)

    @classmethod
    def for_channels(cls, n: int, amplitude: float = 0.5, **kw) -> "EscConfig":
        """Equal amplitudes with frequencies spread evenly over (0.35, 0.85) pi."""
        om = tuple(math.pi * (0.5 if n == 1 else 0.35 + 0.5 * i / (n - 1)) for i in range(n))
        return cls(amplitude=(amplitude,) * n, omega=om, **kw)


@dataclass(frozen=True)
class EscState:
    step: int
    nominal: np.ndarray
    filter_mean: np.ndarray  # washout memory (per channel)
    integrator: np.ndarray  # accumulated gain * demodulated signal, before clamping
    primed: bool = False

    @classmethod
    def start(cls, nominal: Sequence[float]) -> "EscState":
        nom = np.array(nominal, dtype=float)
        z = np.zeros_like(nom)
        return cls(0, nom, z.copy(), z.copy(), False)

    def command(self, cfg: EscConfig) -> np.ndarray:
        return self.nominal + np.array(cfg.amplitude) * np.sin(np.array(cfg.omega) * self.step)


def esc_step(state: EscState, objective_sample: float, cfg: EscConfig) -> tuple[EscState, np.ndarray]:
    """Consume the objective measured at ``state.command(cfg)``.

    Returns the advanced state and the next commanded angles.
    """
    J = float(objective_sample)
    if not math.isfinite(J):
        raise ValueError(f"non-finite objective sample {objective_sample!r}")
    if state.nominal.shape != (cfg.n_channels,):
        raise ValueError("state and config disagree on the channel count")
    # Seed the washout with the first sample so a constant objective yields zero.
    mean = state.filter_mean if state.primed else np.full(cfg.n_channels, J)
    hp = J - mean
    mean = (1 - cfg.highpass) * mean + cfg.highpass * J
    demod = hp * np.sin(np.array(cfg.omega) * state.step)
    delta = cfg.gain * demod
    nominal = state.nominal + np.clip(delta, -cfg.clamp, cfg.clamp)
    new = EscState(state.step + 1, nominal, mean, state.integrator + delta, True)
    return new, new.command(cfg)


# ---------------------------------------------------------------- hybrid control

@dataclass(frozen=True)
class SwitchRule:
    """Hand off once the raw reward exceeds ``threshold`` for ``window`` steps."""

    threshold: float
    window: int = 5
    budget: int = 50  # maximum RL steps

    def __post_init__(self):
        if self.window < 1 or self.budget < 0:
            raise ValueError("window must be >= 1 and budget >= 0")


@dataclass
class HybridLog:
    rows: list[dict] = field(default_factory=list)
    handoff_step: int | None = None
    handoff_reward: float = float("nan")
    failed: bool = False

    @property
    def status(self) -> str:
        return "handoff failed" if self.failed else "ok"

    def rewards(self, phase: str | None = None) -> np.ndarray:
        return np.array([r["raw_reward"] for r in self.rows if phase in (None, r["phase"])])

    def write_csv(self, path, angle_names: Sequence[str], comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["step", "phase", *angle_names, "K", "raw_reward"])
            for r in self.rows:
                w.writerow([r["step"], r["phase"], *(repr(float(a)) for a in r["angles"]),
                            repr(float(r["K"])), repr(float(r["raw_reward"]))])


def _current_angles(env: LaserEnv) -> np.ndarray:
    return np.array([env.ctrl.get(a) for a in env.cfg.controlled_angles])


def hybrid_control(env: LaserEnv, net: QNetwork, esc_cfg: EscConfig, rule: SwitchRule,
                   esc_steps: int = 500,
                   k_schedule: Callable[[int], float] | None = None) -> HybridLog:
    """Greedy RL until ``rule`` fires, then ESC from the reached angles.

    The environment must already be reset. Steps are numbered from 1. With
    ``rule.threshold == -inf`` the handoff happens before any RL action, so
    every logged step is an ESC step. ``k_schedule(i)`` sets the
    birefringence before ESC step ``i`` (0-based) to model slow drift.
    """
    if esc_cfg.n_channels != env.cfg.n_controls:
        raise ValueError("ESC channel count must equal the number of controlled angles")
    log = HybridLog()
    step = 0
    streak = 0
    last = raw_reward(env.fields, env.cfg.reward_cfg)
    if rule.threshold != -math.inf:
        while streak < rule.window:
            if step >= rule.budget or env.done:
                log.failed = True
                return log
            res = env.step(int(np.argmax(forward(net, env.observe()))))
            step += 1
            last = res.info["raw_reward"]
            streak = streak + 1 if last > rule.threshold else 0
            log.rows.append({"step": step, "phase": "RL", "angles": _current_angles(env),
                             "K": env.cfg.cavity.fiber.K, "raw_reward": last})
            if res.info["blowup"]:
                log.failed = True
                return log
    log.handoff_step = step + 1
    log.handoff_reward = last
    state = EscState.start(_current_angles(env))
    cmd = state.command(esc_cfg)
    for i in range(esc_steps):
        if k_schedule is not None:
            env.set_birefringence(k_schedule(i))
        J = env.apply_control(cmd)
        step += 1
        log.rows.append({"step": step, "phase": "ESC", "angles": cmd.copy(),
                         "K": env.cfg.cavity.fiber.K, "raw_reward": J})
        state, cmd = esc_step(state, J, esc_cfg)
    return log


def rl_continuation(env: LaserEnv, net: QNetwork, steps: int,
                    k_schedule: Callable[[int], float] | None = None) -> np.ndarray:
    """Keep applying the greedy policy past the episode horizon; returns raw rewards."""
    table = action_table(env.cfg.n_controls)
    out = []
    for i in range(steps):
        if k_schedule is not None:
            env.set_birefringence(k_schedule(i))
        a = int(np.argmax(forward(net, env.observe())))
        angles = _current_angles(env) + env.cfg.step_deg * table[a]
        out.append(env.apply_control(angles))
    return np.array(out)


def linear_drift(k_start: float, k_end: float, steps: int) -> Callable[[int], float]:
    return lambda i: k_start + (k_end - k_start) * min(i, steps - 1) / max(steps - 1, 1)


__all__ = ["EscConfig", "EscState", "HybridLog", "SwitchRule", "esc_step", "hybrid_control",
           "linear_drift", "rl_continuation"]
