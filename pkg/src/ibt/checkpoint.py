"""Single-file weight container.

Layout: the 8-byte magic ``IBTCKPT1``, a little-endian uint64 byte length,
a UTF-8 JSON manifest of ``{name, dtype, shape}`` records, then each array's
raw little-endian float64 payload in manifest order. Batch-norm running
statistics are stored alongside the trainable parameters so a reloaded
model evaluates identically.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"IBTCKPT1"


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray]) -> None:
    manifest = [{"name": name, "dtype": "f64", "shape": list(arr.shape)}
                for name, arr in state.items()]
    blob = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for arr in state.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (manifest_len,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})")
    state: dict[str, np.ndarray] = {}
    offset = 16 + manifest_len
    for entry in manifest:
        if entry.get("dtype") != "f64":
            raise CheckpointError(f"{path}: unsupported dtype '{entry.get('dtype')}'")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: payload for '{entry['name']}' is truncated")
        state[entry["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return state
