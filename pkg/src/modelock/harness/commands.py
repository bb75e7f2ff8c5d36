"""Experiment orchestration behind the command-line interface.

Every command takes a completed config dict (see ``config.py``) and an output
directory, writes CSV files that begin with a ``# config_hash=...`` line, and
returns a result object so the same code paths serve tests and the CLI.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from modelock import __version__
from modelock.cavity import (BlowUpError, ControlState, dump_fields_csv, sech_pulse, settle)
from modelock.dqn.agent import (DivergenceError, EpisodeLog, FinetuneConfig, evaluate,
                                grow_controllers, train, transfer_finetune)
from modelock.dqn.checkpoint import save_checkpoint
from modelock.dqn.network import QNetwork, forward
from modelock.env import LaserEnv, random_policy_rewards
from modelock.esc import HybridLog, hybrid_control, linear_drift, rl_continuation
from modelock.harness import config as C
from modelock.objective import calibrate, reward

log = logging.getLogger(__name__)


def _hash_line(cfg: dict) -> str:
    return f"config_hash={C.config_hash(cfg)}"


def write_csv(path: Path, cfg: dict, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_hash_line(cfg)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def write_manifest(out: Path, command: str, cfg: dict, started: float, extra: dict | None = None):
    import numba

    manifest = {
        "command": command,
        "config_hash": C.config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {"modelock": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "numba": numba.__version__},
        "wall_time_s": round(time.time() - started, 3),
    }
    manifest.update(C.json_ready(extra or {}))
    (Path(out) / f"manifest_{command}.json").write_text(json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------- calibration

def ensure_calibrated(cfg: dict, config_path: str | Path | None = None) -> dict:
    """Fill reward center/scale from a random-policy rollout if they are unset."""
    r = cfg["reward"]
    if r["center"] is not None and r["scale"] is not None:
        return cfg
    samples = random_policy_rewards(C.env_config(cfg), r["calibration_episodes"], cfg["seed"])
    rc = calibrate(samples, C.reward_config(cfg))
    cfg = json.loads(json.dumps(cfg))
    cfg["reward"].update(center=rc.center, scale=rc.scale, blowup_penalty=rc.blowup_penalty)
    if config_path is not None:
        C.save_config(cfg, config_path)
    return cfg


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepResult:
    """Settled reward over a grid of angle values (or K values)."""

    variable: str
    values: np.ndarray
    rewards: np.ndarray  # NaN where the point blew up
    cv: np.ndarray  # coefficient of variation over the averaging window
    K: float | None = None
    fraction: float = 0.7

    @property
    def blown(self) -> np.ndarray:
        return ~np.isfinite(self.rewards)

    @property
    def argmax(self) -> int:
        if np.all(self.blown):
            raise ValueError("every sweep point blew up")
        return int(np.nanargmax(self.rewards))

    @property
    def best_value(self) -> float:
        return float(self.values[self.argmax])

    @property
    def best_reward(self) -> float:
        return float(self.rewards[self.argmax])

    @property
    def threshold(self) -> float:
        """Mode-locking threshold: a fixed fraction of the sweep optimum."""
        return self.fraction * self.best_reward

    def to_json(self) -> dict:
        return {"variable": self.variable, "values": self.values.tolist(),
                "rewards": [None if not math.isfinite(x) else x for x in self.rewards.tolist()],
                "cv": [None if not math.isfinite(x) else x for x in self.cv.tolist()],
                "K": self.K, "fraction": self.fraction}

    @classmethod
    def from_json(cls, d: dict) -> "SweepResult":
        nan = float("nan")
        return cls(d["variable"], np.array(d["values"], float),
                   np.array([nan if x is None else x for x in d["rewards"]], float),
                   np.array([nan if x is None else x for x in d["cv"]], float),
                   d["K"], d["fraction"])


def settled_reward(cfg: dict, ctrl: ControlState, K: float | None = None) -> tuple[float, float]:
    """Mean and coefficient of variation of the raw reward after settling.

    Starts from the configured sech pulses, settles ``settle_trips`` round
    trips, then averages ``average_samples`` readings ``average_every`` trips
    apart. Blow-up gives ``(nan, nan)``.
    """
    sw = cfg["sweep"]
    cav = C.cavity_config(cfg, K)
    rc = C.reward_config(cfg)
    try:
        f = settle(sech_pulse(cav.grid, *cfg["env"]["initial_amps"]), ctrl, cav, sw["settle_trips"])
        vals = []
        for _ in range(sw["average_samples"]):
            f = settle(f, ctrl, cav, sw["average_every"])
            vals.append(reward(f, rc))
    except BlowUpError:
        return float("nan"), float("nan")
    vals = np.array(vals)
    m = float(vals.mean())
    return m, float(vals.std() / m) if m > 0 else 0.0


def sweep_angles(cfg: dict, K: float | None = None, values: Sequence[float] | None = None,
                 threads: int = 1) -> SweepResult:
    sw = cfg["sweep"]
    name = sw["angle"]
    if values is None:
        values = np.arange(sw["start"], sw["stop"], sw["step"])
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("sweep grid is empty")
    base = ControlState(**cfg["env"]["initial_ctrl"])
    jobs = [base.with_angles(**{name: v}) for v in values]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        res = list(ex.map(lambda c: settled_reward(cfg, c, K), jobs))
    K_used = cfg["cavity"]["fiber"]["K"] if K is None else float(K)
    return SweepResult(name, values, np.array([r[0] for r in res]), np.array([r[1] for r in res]),
                       K_used, sw["threshold_fraction"])


def sweep_birefringence(cfg: dict, ctrl: ControlState, K_values: Sequence[float],
                        threads: int = 1) -> SweepResult:
    K_values = np.asarray(K_values, dtype=float)
    if K_values.size == 0:
        raise ValueError("sweep grid is empty")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        res = list(ex.map(lambda k: settled_reward(cfg, ctrl, k), K_values))
    return SweepResult("K", K_values, np.array([r[0] for r in res]),
                       np.array([r[1] for r in res]), None, cfg["sweep"]["threshold_fraction"])


def _sweep_key(cfg: dict, K: float) -> str:
    relevant = {k: cfg[k] for k in ("cavity", "sweep")}
    relevant["env"] = {k: cfg["env"][k] for k in ("initial_ctrl", "initial_amps")}
    relevant["reward"] = {k: cfg["reward"][k] for k in ("kurtosis", "polarization")}
    relevant["K"] = float(K)
    return C.config_hash(relevant)


def cached_sweep(cfg: dict, out: Path, K: float | None = None, threads: int = 1) -> SweepResult:
    """Angle sweep at ``K``, reused from ``out`` when settings are unchanged."""
    K = cfg["cavity"]["fiber"]["K"] if K is None else float(K)
    path = Path(out) / f"sweep_{_sweep_key(cfg, K)}.json"
    if path.exists():
        return SweepResult.from_json(json.loads(path.read_text()))
    res = sweep_angles(cfg, K, threads=threads)
    Path(out).mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(res.to_json()))
    return res


def cmd_sweep(cfg: dict, out: Path, threads: int = 1, K: float | None = None,
              k_sweep: bool = True) -> dict:
    """Angle sweep (defines the mode-locking threshold) plus a K sweep at its argmax."""
    started = time.time()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    res = cached_sweep(cfg, out, K, threads)
    write_csv(out / "sweep.csv", cfg, [res.variable, "raw_reward", "cv", "blown"],
              zip(res.values, res.rewards, res.cv, res.blown.astype(int)))
    report = {"angle": res.variable, "argmax": res.best_value, "best_reward": res.best_reward,
              "threshold": res.threshold, "median": float(np.nanmedian(res.rewards)), "K": res.K}
    if k_sweep:
        ctrl = ControlState(**cfg["env"]["initial_ctrl"]).with_angles(**{res.variable: res.best_value})
        ks = sweep_birefringence(cfg, ctrl, cfg["sweep"]["K_values"], threads)
        write_csv(out / "sweep_K.csv", cfg, ["K", "raw_reward", "cv", "blown"],
                  zip(ks.values, ks.rewards, ks.cv, ks.blown.astype(int)))
        report["K_sweep"] = {"values": ks.values, "rewards": ks.rewards}
    write_manifest(out, "sweep", cfg, started, {"report": report})
    return report


# ---------------------------------------------------------------- simulate

def cmd_simulate(cfg: dict, out: Path, ctrl: ControlState | None = None,
                 n_trips: int | None = None, K: float | None = None) -> float:
    """Settle from sech pulses, dump the fields and return the raw reward."""
    started = time.time()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cav = C.cavity_config(cfg, K)
    ctrl = ctrl or ControlState(**cfg["env"]["initial_ctrl"])
    trips = n_trips or cfg["sweep"]["settle_trips"]
    f = settle(sech_pulse(cav.grid, *cfg["env"]["initial_amps"]), ctrl, cav, trips)
    r = reward(f, C.reward_config(cfg))
    dump_fields_csv(f, out / "fields.csv", comment=_hash_line(cfg))
    write_manifest(out, "simulate", cfg, started,
                   {"raw_reward": r, "ctrl": ctrl.as_array(), "n_trips": trips})
    return r


# ---------------------------------------------------------------- training

@dataclass
class TrainOutcome:
    net: QNetwork
    log: list[tuple[int, EpisodeLog]] = field(default_factory=list)  # (stage, entry)


def run_curriculum(cfg: dict, stages: Sequence[Sequence[str]] | None = None,
                   episodes: Sequence[int] | None = None, seed: int | None = None,
                   net: QNetwork | None = None) -> TrainOutcome:
    """Train through the controller-count curriculum.

    Each stage trains on its own environment; between stages the network is
    grown with ``grow_controllers``. A divergence abort propagates with the
    log collected so far attached as ``exc.outcome``.
    """
    cur = cfg["curriculum"]
    stages = [list(s) for s in (stages or cur["stages"])]
    episodes = list(episodes or cur["episodes"])
    seed = cfg["seed"] if seed is None else seed
    outcome = TrainOutcome(net)
    lookup = {tuple(s): i for i, s in enumerate(cur["stages"])}
    for i, (angles, n_ep) in enumerate(zip(stages, episodes)):
        j = lookup.get(tuple(angles), min(i, len(cur["stages"]) - 1))
        ecfg = C.env_config(cfg, controlled=angles, step_deg=cur["step_deg"][j],
                            episode_len=cur["episode_len"][j])
        env = LaserEnv(ecfg, seed + 1000 * i)
        if outcome.net is not None and outcome.net.spec.n_extra != len(angles):
            outcome.net = grow_controllers(outcome.net, len(angles),
                                           np.random.default_rng(seed + 1000 * i))
        tcfg = C.train_config(cfg, episodes=n_ep, seed=seed + 1000 * i)
        try:
            res = train(env, tcfg, net=outcome.net, spec=C.net_spec(cfg, ecfg),
                        callback=_progress(i))
        except DivergenceError as exc:
            outcome.log += [(i, e) for e in exc.log]
            exc.outcome = outcome
            exc.stage = i
            raise
        outcome.net = res.net
        outcome.log += [(i, e) for e in res.log]
    return outcome


def _progress(stage: int):
    def cb(ep, net, entries):
        if (ep + 1) % 10 == 0:
            e = entries[-1]
            log.info("stage %d episode %d total_raw %.3f loss %.4g eps %.3f",
                     stage, ep + 1, e.total_raw_reward, e.mean_loss, e.eps)
        return False
    return cb


def write_train_log(path: Path, cfg: dict, log) -> None:
    write_csv(path, cfg, ["episode", "stage", "total_raw_reward", "total_rescaled_reward",
                          "mean_loss", "eps", "max_abs_q"],
              ((e.episode, s, e.total_raw_reward, e.total_rescaled_reward, e.mean_loss, e.eps,
                e.max_abs_q)
               for s, e in log))


def cmd_train(cfg: dict, out: Path) -> TrainOutcome:
    started = time.time()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        outcome = run_curriculum(cfg)
    except DivergenceError as exc:
        write_train_log(out / "train_log.csv", cfg, exc.outcome.log)
        write_manifest(out, "train", cfg, started, {"diverged": str(exc)})
        raise
    write_train_log(out / "train_log.csv", cfg, outcome.log)
    save_checkpoint(outcome.net, out / "model.ckpt", {"config_hash": C.config_hash(cfg)})
    write_manifest(out, "train", cfg, started, {"episodes": len(outcome.log),
                                                "checkpoint": str(out / "model.ckpt")})
    return outcome


# ---------------------------------------------------------------- evaluation

def eval_initials(cfg: dict) -> list[float]:
    e = cfg["eval"]
    full = np.arange(e["initial_start"], e["initial_stop"] + 0.5 * e["initial_step"],
                     e["initial_step"])
    return [float(x) for x in full]


def probe_initials(cfg: dict, count: int) -> list[float]:
    """Evenly spaced validation starts, offset from the evaluation grid points."""
    e = cfg["eval"]
    edges = np.linspace(e["initial_start"], e["initial_stop"], count + 1)
    return [float(x) for x in 0.5 * (edges[:-1] + edges[1:])]


@dataclass
class EvalReport:
    initials: list[float]
    final_rewards: list[float]
    threshold: float
    K: float

    @property
    def success(self) -> list[bool]:
        return [r >= self.threshold for r in self.final_rewards]

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.success)) if self.initials else float("nan")


def evaluate_policy(cfg: dict, net: QNetwork, threshold: float, K: float | None = None,
                    initials: Sequence[float] | None = None) -> EvalReport:
    """Greedy rollouts from each initial value of the first controlled angle."""
    ecfg = _env_for(cfg, net, K)
    initials = eval_initials(cfg) if initials is None else list(initials)
    env = LaserEnv(ecfg, cfg["seed"])
    base = ecfg.initial_ctrl
    name = ecfg.controlled_angles[0]
    eps = evaluate(env, net, [base.with_angles(**{name: a}) for a in initials])
    return EvalReport(list(initials), [e.final_raw for e in eps], threshold, ecfg.cavity.fiber.K)


def _controls_of(cfg: dict, net: QNetwork) -> list[str]:
    n = net.spec.n_extra
    for stage in cfg["curriculum"]["stages"]:
        if len(stage) == n:
            return list(stage)
    return list(cfg["env"]["controlled_angles"])[:n]


def _env_for(cfg: dict, net: QNetwork | None, K: float | None = None):
    """Environment matching the controller count of ``net`` (config default if None)."""
    if net is None:
        return C.env_config(cfg, K=K)
    angles = _controls_of(cfg, net)
    cur = cfg["curriculum"]
    for j, stage in enumerate(cur["stages"]):
        if list(stage) == angles:
            return C.env_config(cfg, K=K, controlled=angles, step_deg=cur["step_deg"][j],
                                episode_len=cur["episode_len"][j])
    return C.env_config(cfg, K=K, controlled=angles)


def cmd_eval(cfg: dict, out: Path, net: QNetwork, K: float | None = None,
             initials: Sequence[float] | None = None, threads: int = 1) -> EvalReport:
    started = time.time()
    out = Path(out)
    sw = cached_sweep(cfg, out, K, threads)
    rep = evaluate_policy(cfg, net, sw.threshold, K, initials)
    write_csv(out / "eval.csv", cfg, ["initial", "final_raw_reward", "success"],
              zip(rep.initials, rep.final_rewards, (int(s) for s in rep.success)))
    write_manifest(out, "eval", cfg, started, {"success_rate": rep.success_rate,
                                               "threshold": rep.threshold, "K": rep.K})
    return rep


# ---------------------------------------------------------------- transfer

def episodes_to_threshold(cfg: dict, K: float, threshold: float, net: QNetwork | None,
                          budget: int, seed: int | None = None) -> tuple[int | None, QNetwork]:
    """Train (cold start if ``net`` is None, else fine-tune) until greedy success.

    Every ``finetune.eval_every`` episodes the greedy policy is scored on
    ``finetune.probe_initials`` validation starts (disjoint from the
    evaluation grid). Training stops once the rate reaches
    ``finetune.success_target``. Returns the episodes used (None if the
    budget ran out) and the best-scoring network seen, the starting network
    included.
    """
    ft = cfg["finetune"]
    seed = cfg["seed"] if seed is None else seed
    ecfg = _env_for(cfg, net, K)
    env = LaserEnv(ecfg, seed)
    probe = probe_initials(cfg, ft["probe_initials"])
    reached: list[int] = []
    best: list = [-1.0, net]

    def score(candidate: QNetwork) -> float:
        rate = evaluate_policy(cfg, candidate, threshold, K, probe).success_rate
        if rate > best[0]:
            best[:] = [rate, candidate.copy()]
        return rate

    def check(ep, current, log):
        if (ep + 1) % ft["eval_every"]:
            return False
        if score(current) >= ft["success_target"]:
            reached.append(ep + 1)
            return True
        return False

    if net is not None and score(net) >= ft["success_target"]:
        return 0, net.copy()
    if net is None:
        res = train(env, C.train_config(cfg, episodes=budget, seed=seed),
                    spec=C.net_spec(cfg, ecfg), callback=check)
    else:
        ftc = FinetuneConfig(train=C.train_config(cfg, seed=seed), eps_restart=ft["eps_restart"],
                             episodes=budget)
        res = transfer_finetune(net, env, ftc, callback=check)
    if reached:
        return reached[0], res.net
    return None, best[1] if best[1] is not None else res.net


@dataclass
class TransferRow:
    K: float
    threshold: float
    zero_shot: float
    finetuned: float
    episodes: int | None


def cmd_transfer(cfg: dict, out: Path, net: QNetwork, K_list: Sequence[float] | None = None,
                 threads: int = 1) -> list[TransferRow]:
    started = time.time()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for K in (K_list if K_list is not None else cfg["transfer"]["K_list"]):
        sw = cached_sweep(cfg, out, K, threads)
        zero = evaluate_policy(cfg, net, sw.threshold, K)
        used, tuned = episodes_to_threshold(cfg, K, sw.threshold, net, cfg["finetune"]["episodes"])
        fine = evaluate_policy(cfg, tuned, sw.threshold, K)
        save_checkpoint(tuned, out / f"model_K{K:+.3f}.ckpt", {"K": K})
        rows.append(TransferRow(float(K), sw.threshold, zero.success_rate, fine.success_rate, used))
    write_csv(out / "transfer.csv", cfg,
              ["K", "threshold", "zero_shot_success", "finetuned_success", "finetune_episodes"],
              ((r.K, r.threshold, r.zero_shot, r.finetuned, "" if r.episodes is None else r.episodes)
               for r in rows))
    write_manifest(out, "transfer", cfg, started, {"rows": [r.__dict__ for r in rows]})
    return rows


# ---------------------------------------------------------------- hybrid

def run_hybrid(cfg: dict, net: QNetwork, threshold: float, drift: bool = False,
               initial: float | None = None, esc_steps: int | None = None) -> HybridLog:
    h = cfg["hybrid"]
    ecfg = _env_for(cfg, net)
    env = LaserEnv(ecfg, cfg["seed"])
    start = None
    if initial is not None:
        start = ecfg.initial_ctrl.with_angles(**{ecfg.controlled_angles[0]: initial})
    env.reset(start)
    steps = h["esc_steps"] if esc_steps is None else esc_steps
    sched = linear_drift(h["K_drift"][0], h["K_drift"][1], steps) if drift else None
    env.cfg = _with_trips(env.cfg, h["trips_per_esc_step"])
    return hybrid_control(env, net, C.esc_config(cfg, ecfg.n_controls),
                          C.switch_rule(cfg, threshold), steps, sched)


def _with_trips(ecfg, trips):
    return replace(ecfg, trips_per_step=trips)


def rl_only(cfg: dict, net: QNetwork, steps: int, initial: float | None = None,
            warmup: int | None = None) -> np.ndarray:
    """Greedy policy for ``warmup`` episode steps, then ``steps`` more (for comparison)."""
    ecfg = _env_for(cfg, net)
    env = LaserEnv(ecfg, cfg["seed"])
    start = None
    if initial is not None:
        start = ecfg.initial_ctrl.with_angles(**{ecfg.controlled_angles[0]: initial})
    obs = env.reset(start)
    for _ in range(warmup if warmup is not None else ecfg.episode_len):
        obs = env.step(int(np.argmax(forward(net, obs)))).observation
    return rl_continuation(env, net, steps)


def cmd_hybrid(cfg: dict, out: Path, net: QNetwork, drift: bool = False,
               initial: float | None = None, threads: int = 1) -> HybridLog:
    started = time.time()
    out = Path(out)
    sw = cached_sweep(cfg, out, None, threads)
    log = run_hybrid(cfg, net, sw.threshold, drift, initial)
    names = list(_controls_of(cfg, net))
    log.write_csv(out / ("hybrid_drift.csv" if drift else "hybrid.csv"), names, _hash_line(cfg))
    write_manifest(out, "hybrid", cfg, started,
                   {"status": log.status, "handoff_step": log.handoff_step,
                    "handoff_reward": log.handoff_reward, "threshold": sw.threshold,
                    "drift": drift})
    return log
