"""Single-file checkpoint container with a versioned magic header.

Layout: ``<magic>\\n``, a 4-byte little-endian header length, a JSON header
(config echo, seed, metadata, array index), then the raw array bytes in index
order. Arrays are little-endian C-order numpy buffers.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

SEG_MAGIC = "MGMTN-SEG-v1"
FAR_MAGIC = "MGMTN-FAR-v1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, magic: str, arrays: dict[str, np.ndarray],
                    config: dict, seed: int, meta: dict | None = None) -> None:
    index = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "config": config,
        "seed": seed,
        "meta": meta or {},
        "arrays": index,
    }
    payload = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(magic.encode() + b"\n")
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str | Path, expected_magic: str):
    """Returns (arrays, config, seed, meta); refuses mismatched magic headers."""
    with open(path, "rb") as f:
        magic = f.readline().strip().decode(errors="replace")
        if magic != expected_magic:
            raise CheckpointError(
                f"{path}: expected {expected_magic!r} checkpoint, found {magic!r}"
            )
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            n = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            buf = f.read(n)
            if len(buf) != n:
                raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return arrays, header["config"], header["seed"], header["meta"]


# ---------------------------------------------------------------------------
# torch module <-> named numpy arrays
# ---------------------------------------------------------------------------

def state_arrays(module) -> dict[str, np.ndarray]:
    """A module's full state (parameters and buffers) as named numpy arrays."""
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state_arrays(module, arrays: dict[str, np.ndarray]) -> None:
    import torch

    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in arrays.items()}
    module.load_state_dict(state)


def optimizer_arrays(optimizer) -> tuple[dict[str, np.ndarray], dict]:
    """Flatten an optimizer state dict into arrays plus JSON-safe groups."""
    sd = optimizer.state_dict()
    arrays = {}
    shapes = {}
    for pid, entries in sd["state"].items():
        for key, val in entries.items():
            name = f"opt/{pid}/{key}"
            arrays[name] = val.detach().cpu().numpy() if hasattr(val, "detach") else np.asarray(val)
            shapes[name] = True
    groups = json.loads(json.dumps(sd["param_groups"]))
    return arrays, {"param_groups": groups}


def load_optimizer_arrays(optimizer, arrays: dict[str, np.ndarray], meta: dict) -> None:
    import torch

    state: dict[int, dict] = {}
    for name, arr in arrays.items():
        if not name.startswith("opt/"):
            continue
        _, pid, key = name.split("/", 2)
        t = torch.from_numpy(np.ascontiguousarray(arr))
        state.setdefault(int(pid), {})[key] = t
    optimizer.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def parameter_hash(module) -> str:
    """SHA-256 over all named parameters and buffers; order-stable."""
    h = hashlib.sha256()
    for name, arr in sorted(state_arrays(module).items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
