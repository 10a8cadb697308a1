"""Single-file container format for :class:`MixedDataset`.

Layout::

    MAGIC (8 bytes) | header length (uint64 LE) | header (UTF-8 JSON) | payload

The payload is one contiguous little-endian float64 array. Each trajectory
occupies ``length * (2 * state_dim + action_dim + 2)`` values, stored as
states, actions, rewards, next_states, terminals (0.0 / 1.0), in that order.
The header's ``trajectories`` index gives each block's offset in values.
"""

from __future__ import annotations

import json
import struct
from os import PathLike
from pathlib import Path
from typing import Any

import numpy as np

from .core import MixedDataset, Trajectory

MAGIC = b"MXFDSET\x00"
FORMAT_VERSION = 1
_F8 = np.dtype("<f8")


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dataset_to_bytes(dataset: MixedDataset, metadata: dict | None = None) -> bytes:
    sd, ad = dataset.state_dim, dataset.action_dim
    index, blocks, offset = [], [], 0
    for traj in dataset.trajectories:
        block = np.concatenate([
            traj.states.ravel(), traj.actions.ravel(), traj.rewards,
            traj.next_states.ravel(), traj.terminals.astype(np.float64),
        ])
        index.append({"id": traj.id, "dt": traj.dt, "length": len(traj), "offset": offset})
        blocks.append(block)
        offset += block.size
    header = {
        "format_version": FORMAT_VERSION,
        "state_dim": sd,
        "action_dim": ad,
        "delta_set": list(dataset.delta_set),
        "num_values": offset,
        "metadata": metadata or {},
        "trajectories": index,
    }
    head = _canonical_json(header)
    payload = np.concatenate(blocks).astype(_F8, copy=False).tobytes()
    return MAGIC + struct.pack("<Q", len(head)) + head + payload


def read_header(raw: bytes) -> tuple[dict, int]:
    if raw[:8] != MAGIC:
        raise ValueError("not a mixedfreq dataset file (bad magic)")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {header.get('format_version')}")
    return header, 16 + n


def dataset_from_bytes(raw: bytes) -> tuple[MixedDataset, dict]:
    header, start = read_header(raw)
    values = np.frombuffer(raw, dtype=_F8, offset=start)
    if values.size != header["num_values"]:
        raise ValueError(f"payload holds {values.size} values, header says {header['num_values']}")
    sd, ad = header["state_dim"], header["action_dim"]
    trajs = []
    for entry in header["trajectories"]:
        T, o = entry["length"], entry["offset"]
        parts = []
        for width in (sd, ad, 1, sd, 1):
            parts.append(values[o:o + T * width].reshape(T, width))
            o += T * width
        states, actions, rewards, next_states, terminals = parts
        trajs.append(Trajectory(entry["dt"], states, actions, rewards[:, 0], next_states,
                                terminals[:, 0] != 0.0, entry["id"]))
    dataset = MixedDataset(tuple(trajs))
    if list(dataset.delta_set) != header["delta_set"]:
        raise ValueError("header delta_set does not match stored trajectories")
    return dataset, header["metadata"]


def save_dataset(dataset: MixedDataset, path: str | PathLike, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dataset_to_bytes(dataset, metadata))
    return path


def load_dataset(path: str | PathLike) -> tuple[MixedDataset, dict]:
    return dataset_from_bytes(Path(path).read_bytes())
