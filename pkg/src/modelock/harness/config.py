"""Run configuration: one JSON document holding every setting of an experiment.

Missing keys are filled from ``default_config()``; the completed document is
written back so reruns never depend on defaults compiled into the code.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from modelock.cavity import (CavityConfig, ControlState, FiberParams, GainParams,
                             make_grid)
from modelock.dqn.agent import FinetuneConfig, TrainConfig
from modelock.dqn.network import NetSpec
from modelock.env import EnvConfig
from modelock.esc import EscConfig, SwitchRule
from modelock.objective import RewardConfig


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    """Desk-scale defaults (see README for the rationale behind each group)."""
    return {
        "seed": 0,
        "out": "runs/default",
        "threads": 1,
        "cavity": {
            "fiber": {"D": 0.4, "K": 0.1, "A": 2.0 / 3.0, "B": 1.0 / 3.0, "kerr": 1.0},
            "gain": {"g0": 1.73, "e0": 1.0, "tau": 0.1, "Gamma": 0.1},
            "grid": {"n": 256, "window": 40.0},
            "z_length": 1.0,
            "n_z_steps": 40,
            "element_order": ["qwp2", "hwp", "polarizer", "qwp1"],
        },
        "env": {
            "initial_ctrl": {"alpha1": -25.0, "alpha2": -19.1, "alpha3": 12.6, "alpha_p": 55.6},
            "initial_amps": [1.0, 1.0],
            "controlled_angles": ["alpha1"],
            "step_deg": 2.0,
            "trips_per_step": 10,
            "episode_len": 40,
            "obs_points": 128,
            "obs_mode": "magnitude",
            "initial_range": {"alpha1": [-40.0, -10.0]},
        },
        "reward": {
            # center/scale null: calibrated from a random-policy rollout on first run
            "center": None,
            "scale": None,
            "blowup_penalty": None,
            "kurtosis": "amplitude",
            "polarization": "both",
            "calibration_episodes": 10,
        },
        "network": {"conv": [[8, 5], [16, 5]], "pool": 2, "fc": [256, 128], "slope": 0.01},
        "train": {
            "gamma": 0.9, "lr": 1e-4, "eps_start": 1.0, "eps_end": 0.05, "eps_decay": 0.995,
            "batch_size": 64, "warmup_size": 500, "replay_capacity": 20000,
            "target_blend": 0.01, "episodes": 600, "double": False,
            "divergence_bound": 1000.0, "train_every": 1, "max_grad_norm": 0.0,
        },
        "curriculum": {
            "stages": [["alpha1"]],
            "episodes": [600],
            "step_deg": [2.0],
            "episode_len": [40],
        },
        "sweep": {
            "angle": "alpha1", "start": -90.0, "stop": 90.0, "step": 1.0,
            "settle_trips": 100, "average_samples": 5, "average_every": 4,
            "K_values": [-0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4],
            "threshold_fraction": 0.7,
        },
        "eval": {"initial_start": -40.0, "initial_stop": -10.0, "initial_step": 1.0},
        "finetune": {"eps_restart": 0.3, "episodes": 60, "eval_every": 5,
                     "probe_initials": 10, "success_target": 0.9},
        "transfer": {"K_list": [-0.2, 0.0, 0.2, 0.4]},
        "esc": {"amplitude": 0.5, "highpass": 0.2, "gain": 0.05, "clamp": 0.5},
        "hybrid": {"window": 5, "budget": 30, "esc_steps": 500, "trips_per_esc_step": 10,
                   "K_drift": [0.1, 0.14]},
    }


def deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("initial_range",):
            out[k] = deep_merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path | None, overrides: dict | None = None,
                write_back: bool = True) -> dict:
    """Read a (possibly partial) config file, complete it and write it back."""
    user: dict = {}
    path = Path(path) if path else None
    if path is not None and path.exists():
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
    cfg = deep_merge(default_config(), user)
    if overrides:
        cfg = deep_merge(cfg, overrides)
    validate(cfg)
    if write_back and path is not None and user != cfg:
        save_config(cfg, path)
    return cfg


def save_config(cfg: dict, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def validate(cfg: dict) -> None:
    """Build every typed section once so bad values fail early."""
    try:
        cavity_config(cfg)
        env_config(cfg)
        train_config(cfg)
        esc_config(cfg, 1)
        cur = cfg["curriculum"]
        n = len(cur["stages"])
        if n == 0 or any(len(cur[k]) != n for k in ("episodes", "step_deg", "episode_len")):
            raise ConfigError("curriculum lists must be non-empty and of equal length")
        for a, b in zip(cur["stages"], cur["stages"][1:]):
            if list(b[:len(a)]) != list(a) or len(b) <= len(a):
                raise ConfigError("each curriculum stage must extend the previous one")
        sw = cfg["sweep"]
        if not sw["step"] > 0 or not sw["stop"] > sw["start"]:
            raise ConfigError("sweep range must be non-empty")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from None


# ---------------------------------------------------------------- typed views

def cavity_config(cfg: dict, K: float | None = None) -> CavityConfig:
    c = cfg["cavity"]
    fiber = FiberParams(**c["fiber"])
    if K is not None:
        fiber = FiberParams(**{**c["fiber"], "K": float(K)})
    return CavityConfig(fiber=fiber, gain=GainParams(**c["gain"]),
                        grid=make_grid(**c["grid"]), z_length=c["z_length"],
                        n_z_steps=c["n_z_steps"], element_order=tuple(c["element_order"]))


def reward_config(cfg: dict) -> RewardConfig:
    r = cfg["reward"]
    if r["center"] is None or r["scale"] is None:
        return RewardConfig(kurtosis=r["kurtosis"], polarization=r["polarization"])
    kw = dict(center=r["center"], scale=r["scale"], kurtosis=r["kurtosis"],
              polarization=r["polarization"])
    if r["blowup_penalty"] is not None:
        kw["blowup_penalty"] = r["blowup_penalty"]
    else:
        kw["blowup_penalty"] = r["center"] - 5 * r["scale"]
    return RewardConfig(**kw)


def env_config(cfg: dict, K: float | None = None, controlled: list[str] | None = None,
               step_deg: float | None = None, episode_len: int | None = None) -> EnvConfig:
    e = cfg["env"]
    return EnvConfig(
        cavity=cavity_config(cfg, K),
        initial_ctrl=ControlState(**e["initial_ctrl"]),
        initial_amps=tuple(e["initial_amps"]),
        controlled_angles=tuple(controlled or e["controlled_angles"]),
        step_deg=step_deg if step_deg is not None else e["step_deg"],
        trips_per_step=e["trips_per_step"],
        episode_len=episode_len if episode_len is not None else e["episode_len"],
        reward_cfg=reward_config(cfg),
        obs_points=e["obs_points"],
        obs_mode=e["obs_mode"],
        initial_range={k: tuple(v) for k, v in e["initial_range"].items()},
    )


def train_config(cfg: dict, episodes: int | None = None, seed: int | None = None) -> TrainConfig:
    t = dict(cfg["train"])
    if episodes is not None:
        t["episodes"] = episodes
    return TrainConfig(seed=cfg["seed"] if seed is None else seed, **t)


def finetune_config(cfg: dict) -> FinetuneConfig:
    f = cfg["finetune"]
    return FinetuneConfig(train=train_config(cfg), eps_restart=f["eps_restart"],
                          episodes=f["episodes"])


def net_spec(cfg: dict, env_cfg: EnvConfig) -> NetSpec:
    n = cfg["network"]
    return NetSpec(env_cfg.n_channels, env_cfg.obs_points, env_cfg.n_controls,
                   env_cfg.n_actions, conv=tuple(tuple(c) for c in n["conv"]),
                   pool=n["pool"], fc=tuple(n["fc"]), slope=n["slope"])


def esc_config(cfg: dict, n_channels: int) -> EscConfig:
    e = cfg["esc"]
    return EscConfig.for_channels(n_channels, amplitude=e["amplitude"], highpass=e["highpass"],
                                  gain=e["gain"], clamp=e["clamp"])


def switch_rule(cfg: dict, threshold: float) -> SwitchRule:
    h = cfg["hybrid"]
    return SwitchRule(threshold=threshold, window=h["window"], budget=h["budget"])


@dataclass
class Paths:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def __truediv__(self, name: str) -> Path:
        return self.root / name


def json_ready(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples for JSON output."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return json_ready(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
