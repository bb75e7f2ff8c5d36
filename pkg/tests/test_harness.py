import json

import numpy as np
import pytest

from modelock.harness import commands as cmd
from modelock.harness.cli import main
from modelock.harness.config import (ConfigError, config_hash, default_config, deep_merge,
                                     env_config, load_config)

TINY = {
    "cavity": {"grid": {"n": 64, "window": 20.0}, "n_z_steps": 8},
    "env": {"obs_points": 32, "episode_len": 4, "trips_per_step": 2},
    "reward": {"calibration_episodes": 1},
    "network": {"conv": [[2, 5]], "fc": [8]},
    "train": {"batch_size": 8, "warmup_size": 16, "replay_capacity": 200},
    "curriculum": {"stages": [["alpha1"]], "episodes": [6], "step_deg": [2.0],
                   "episode_len": [4]},
    "sweep": {"start": -10.0, "stop": 10.0, "step": 5.0, "settle_trips": 4,
              "average_samples": 2, "average_every": 2, "K_values": [0.0, 0.1]},
    "eval": {"initial_start": -40.0, "initial_stop": -10.0, "initial_step": 15.0},
    "finetune": {"episodes": 4, "eval_every": 2, "probe_initials": 2},
    "transfer": {"K_list": [0.0]},
    "hybrid": {"esc_steps": 5, "budget": 4, "trips_per_esc_step": 2},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def run(cfg_path, tmp_path, *args):
    return main([args[0], "--config", str(cfg_path), "--out", str(tmp_path / "out"), *args[1:]])


# ---------------------------------------------------------------- config

def test_defaults_validate_and_complete(cfg_path):
    cfg = load_config(cfg_path)
    written = json.loads(cfg_path.read_text())
    assert written == cfg
    assert set(cfg) == set(default_config())
    assert cfg["cavity"]["grid"]["n"] == 64 and cfg["cavity"]["fiber"]["A"] == 2 / 3


def test_unknown_keys_and_bad_json(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key 'train.lr_schedule'"):
        deep_merge(default_config(), {"train": {"lr_schedule": 1}})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(None, {"curriculum": {"stages": [["alpha1"], ["alpha2"]],
                                          "episodes": [1, 1], "step_deg": [2, 2],
                                          "episode_len": [4, 4]}})
    with pytest.raises(ConfigError):
        load_config(None, {"train": {"gamma": 2.0}})


def test_config_hash_is_canonical():
    a = default_config()
    b = json.loads(json.dumps(a))
    assert config_hash(a) == config_hash(b) and len(config_hash(a)) == 16
    b["seed"] = 1
    assert config_hash(a) != config_hash(b)


def test_typed_views():
    cfg = load_config(None, TINY)
    e = env_config(cfg, K=0.3, controlled=["alpha1", "alpha2"])
    assert e.cavity.fiber.K == 0.3 and e.n_actions == 9 and e.obs_len == 2 * 32 + 2


# ---------------------------------------------------------------- commands

def test_calibration_is_materialized(cfg_path):
    cfg = cmd.ensure_calibrated(load_config(cfg_path), cfg_path)
    r = json.loads(cfg_path.read_text())["reward"]
    assert r["center"] == cfg["reward"]["center"] and r["scale"] > 0
    assert r["blowup_penalty"] < r["center"] - 3 * r["scale"]


def test_simulate_and_sweep_outputs(cfg_path, tmp_path):
    assert run(cfg_path, tmp_path, "simulate", "--trips", "3") == 0
    out = tmp_path / "out"
    h = config_hash(load_config(cfg_path))
    assert (out / "fields.csv").read_text().startswith(f"# config_hash={h}\n")
    assert json.loads((out / "manifest_simulate.json").read_text())["config_hash"] == h
    assert run(cfg_path, tmp_path, "sweep") == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == f"# config_hash={h}" and lines[1] == "alpha1,raw_reward,cv,blown"
    assert len(lines) == 2 + 4
    assert len((out / "sweep_K.csv").read_text().splitlines()) == 2 + 2


def test_sweep_threads_do_not_change_results():
    cfg = load_config(None, TINY)
    a = cmd.sweep_angles(cfg, threads=1)
    b = cmd.sweep_angles(cfg, threads=3)
    assert np.array_equal(a.rewards, b.rewards, equal_nan=True)
    assert a.threshold == pytest.approx(0.7 * np.nanmax(a.rewards))


def test_sweep_result_json_round_trip():
    r = cmd.SweepResult("alpha1", np.array([0.0, 1.0]), np.array([np.nan, 2.0]),
                        np.array([np.nan, 0.0]), 0.1)
    back = cmd.SweepResult.from_json(json.loads(json.dumps(r.to_json())))
    assert back.best_value == 1.0 and back.blown.tolist() == [True, False]


def test_train_eval_transfer_hybrid_cli(cfg_path, tmp_path):
    out = tmp_path / "out"
    assert run(cfg_path, tmp_path, "train") == 0
    ckpt = out / "model.ckpt"
    log = (out / "train_log.csv").read_text().splitlines()
    assert log[1] == "episode,stage,total_raw_reward,total_rescaled_reward,mean_loss,eps,max_abs_q"
    assert len(log) == 2 + 6
    assert run(cfg_path, tmp_path, "eval", "--checkpoint", str(ckpt)) == 0
    assert len((out / "eval.csv").read_text().splitlines()) == 2 + 3
    assert run(cfg_path, tmp_path, "transfer", "--checkpoint", str(ckpt)) == 0
    assert (out / "transfer.csv").exists()
    code = run(cfg_path, tmp_path, "hybrid", "--checkpoint", str(ckpt))
    assert code in (0, 5)
    if code == 0:
        assert (out / "hybrid.csv").exists()


def test_training_rerun_is_bit_identical(cfg_path, tmp_path):
    outs = []
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / name)]) == 0
        outs.append(((tmp_path / name / "train_log.csv").read_bytes(),
                     (tmp_path / name / "model.ckpt").read_bytes()))
    assert outs[0] == outs[1]


def test_curriculum_grows_the_network(tmp_path):
    over = json.loads(json.dumps(TINY))
    over["curriculum"] = {"stages": [["alpha1"], ["alpha1", "alpha2"]], "episodes": [4, 4],
                          "step_deg": [2.0, 1.0], "episode_len": [4, 4]}
    cfg = cmd.ensure_calibrated(load_config(None, over))
    res = cmd.run_curriculum(cfg)
    assert res.net.n_actions == 9
    assert [s for s, _ in res.log] == [0] * 4 + [1] * 4
    # downstream commands pick the environment matching the grown network
    th = cmd.sweep_angles(cfg).threshold
    assert len(cmd.evaluate_policy(cfg, res.net, th).initials) == 3
    used, tuned = cmd.episodes_to_threshold(cfg, 0.0, th, res.net, 2)
    assert tuned.n_actions == 9


# ---------------------------------------------------------------- exit codes

def test_exit_code_config_error(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"bogus": 1}))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert main(["eval", "--config", str(p), "--checkpoint", "missing.ckpt"]) == 2


def test_exit_code_blowup(tmp_path):
    over = json.loads(json.dumps(TINY))
    over["cavity"]["fiber"] = {"A": 0.5, "B": 0.2}
    over["cavity"]["n_z_steps"] = 1
    over["env"]["initial_amps"] = [1e60, 1e60]
    over["reward"].update(center=0.0, scale=1.0)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(over))
    with np.errstate(all="ignore"):
        assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_exit_code_divergence(tmp_path):
    over = json.loads(json.dumps(TINY))
    over["train"]["divergence_bound"] = 1e-9
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(over))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 4
    assert (tmp_path / "o" / "train_log.csv").exists()


def test_exit_code_handoff_failure(cfg_path, tmp_path):
    assert run(cfg_path, tmp_path, "train") == 0
    cfg = json.loads(cfg_path.read_text())
    cfg["hybrid"]["budget"] = 0
    cfg_path.write_text(json.dumps(cfg))
    ckpt = str(tmp_path / "out" / "model.ckpt")
    assert run(cfg_path, tmp_path, "hybrid", "--checkpoint", ckpt) == 5
