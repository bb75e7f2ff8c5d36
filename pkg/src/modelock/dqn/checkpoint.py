"""Self-describing binary checkpoints for Q-networks.

Layout::

    magic   8 bytes   b"MLQNET\\x00\\x01"
    version uint32 LE
    hlen    uint32 LE  length of the JSON header in bytes
    header  hlen bytes UTF-8 JSON: spec, layer shapes, obs_len, n_actions,
            n_params, sha256 of the payload, optional user metadata
    payload n_params float64 little-endian
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from modelock.dqn.network import NetSpec, QNetwork

MAGIC = b"MLQNET\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: QNetwork, path, metadata: dict | None = None) -> None:
    payload = net.params.astype("<f8").tobytes()
    header = {
        "format_version": VERSION,
        "spec": net.spec.to_dict(),
        "shapes": [list(s) for s in net.shapes],
        "obs_len": net.obs_len,
        "n_actions": net.n_actions,
        "n_params": net.size,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "metadata": metadata or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + payload)


def read_header(path) -> dict:
    return _parse(Path(path).read_bytes())[0]


def _parse(data: bytes) -> tuple[dict, bytes]:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    off = len(MAGIC)
    if len(data) < off + 8:
        raise CheckpointError("truncated checkpoint: header incomplete")
    version, hlen = struct.unpack_from("<II", data, off)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    off += 8
    if len(data) < off + hlen:
        raise CheckpointError("truncated checkpoint: header incomplete")
    try:
        header = json.loads(data[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from None
    return header, data[off + hlen:]


def load_checkpoint(path, expect_obs_len: int | None = None,
                    expect_actions: int | None = None) -> QNetwork:
    header, payload = _parse(Path(path).read_bytes())
    n = int(header["n_params"])
    if len(payload) < 8 * n:
        raise CheckpointError(f"truncated checkpoint: expected {8 * n} payload bytes, "
                              f"found {len(payload)}")
    if len(payload) > 8 * n:
        raise CheckpointError("corrupted checkpoint: trailing bytes after payload")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError("corrupted checkpoint: payload checksum mismatch")
    spec = NetSpec.from_dict(header["spec"])
    net = QNetwork(spec, np.frombuffer(payload, dtype="<f8").astype(np.float64))
    if [list(s) for s in net.shapes] != header["shapes"] or net.size != n:
        raise CheckpointError("corrupted checkpoint: layer shapes do not match the spec")
    if expect_obs_len is not None and net.obs_len != expect_obs_len:
        raise CheckpointError(f"observation length mismatch: checkpoint expects "
                              f"{net.obs_len}, environment provides {expect_obs_len}")
    if expect_actions is not None and net.n_actions != expect_actions:
        raise CheckpointError(f"action count mismatch: checkpoint has {net.n_actions}, "
                              f"environment has {expect_actions}")
    return net
