import numpy as np
import pytest

from modelock.dqn import NetSpec, QNetwork, forward
from modelock.dqn.checkpoint import (MAGIC, CheckpointError, load_checkpoint, read_header,
                                     save_checkpoint)

SPEC = NetSpec(2, 32, 1, 3, conv=((4, 5),), fc=(8,))


@pytest.fixture
def saved(tmp_path):
    net = QNetwork.initialize(SPEC, np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path, {"K": 0.1})
    return net, path


def test_round_trip_is_bit_identical(saved):
    net, path = saved
    loaded = load_checkpoint(path)
    probe = np.random.default_rng(1).normal(size=SPEC.obs_len)
    assert np.array_equal(forward(loaded, probe), forward(net, probe))
    assert loaded.spec == SPEC
    assert read_header(path)["metadata"] == {"K": 0.1}


def test_save_is_deterministic(saved, tmp_path):
    net, path = saved
    save_checkpoint(net, tmp_path / "again.ckpt", {"K": 0.1})
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_observation_length_mismatch(saved):
    _, path = saved
    with pytest.raises(CheckpointError, match="observation length mismatch"):
        load_checkpoint(path, expect_obs_len=SPEC.obs_len + 1)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect_actions=9)


def test_bad_magic(saved):
    _, path = saved
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="not a checkpoint file"):
        load_checkpoint(path)


def test_truncated_and_corrupted(saved):
    _, path = saved
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    corrupt = bytearray(data)
    corrupt[-3] ^= 0x01
    path.write_bytes(bytes(corrupt))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    path.write_bytes(MAGIC + b"\x02\x00\x00\x00" + data[len(MAGIC) + 4:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_bytes(MAGIC[:4])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
