"""Checkpoint files: a JSON manifest next to a flat little-endian float64 blob.

The blob starts with an 8-byte magic and a uint32 format version; the manifest
lists every named tensor with its shape and byte offset into the blob.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError
from .spec import ModelSpec

MAGIC = b"GRIDCAST"
VERSION = 1
_HEADER = struct.Struct("<8sI")


def _paths(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_checkpoint(path, spec: ModelSpec, state: dict, seed=None, scaler_hash=None, extra=None):
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    index, offset = [], _HEADER.size
    with open(blob_path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION))
        for name, value in state.items():
            arr = np.ascontiguousarray(value, dtype="<f8")
            fh.write(arr.tobytes())
            index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                          "nbytes": arr.nbytes})
            offset += arr.nbytes
    manifest = {
        "format": "gridcast-checkpoint",
        "version": VERSION,
        "spec": spec.to_dict(),
        "seed": seed,
        "scaler_hash": scaler_hash,
        "tensors": index,
    }
    if extra:
        manifest["extra"] = extra
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path, blob_path


def load_checkpoint(path):
    """Return ``(spec, state, manifest)``."""
    manifest_path, blob_path = _paths(path)
    manifest = json.loads(manifest_path.read_text())
    raw = blob_path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointFormatError(f"{blob_path} is truncated")
    magic, version = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{blob_path} has bad magic {magic!r}")
    if version != VERSION or manifest.get("version") != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    state = {}
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(raw):
            raise CheckpointFormatError(f"tensor {entry['name']} runs past end of blob")
        arr = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=start)
        state[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return ModelSpec.from_dict(manifest["spec"]), state, manifest
