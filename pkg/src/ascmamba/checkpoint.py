"""Checkpoint container.

Layout (all integers little-endian)::

    b"ASCM" | u32 version | u64 manifest length | UTF-8 JSON manifest | payload

The manifest is ``{"config": ..., "tensors": [{"name", "shape", "offset"}]}``
with offsets in bytes from the start of the payload; the payload is the
concatenation of every tensor as raw float32.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .numcore import ParamStore

__all__ = ["MAGIC", "VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint",
           "dumps_checkpoint", "loads_checkpoint"]

MAGIC = b"ASCM"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def dumps_checkpoint(tensors, config: dict) -> bytes:
    if isinstance(tensors, ParamStore):
        tensors = tensors.state_dict()
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name]), dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    manifest = _canonical_json({"config": config, "tensors": entries})
    return _HEAD.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(chunks)


def save_checkpoint(tensors, config: dict, path) -> None:
    """Write named float32 tensors plus a JSON-serialisable config snapshot."""
    path = Path(path)
    blob = dumps_checkpoint(tensors, config)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def loads_checkpoint(blob: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: bad magic")
    if len(blob) < _HEAD.size:
        raise CheckpointError(f"{source}: truncated header")
    _, version, mlen = _HEAD.unpack_from(blob)
    if version != VERSION:
        raise CheckpointError(f"{source}: version mismatch (file {version}, expected {VERSION})")
    start = _HEAD.size
    if start + mlen > len(blob):
        raise CheckpointError(f"{source}: truncated manifest")
    try:
        manifest = json.loads(blob[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt manifest ({exc})") from None
    payload = memoryview(blob)[start + mlen:]
    tensors, end = {}, 0
    for entry in manifest["tensors"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(payload):
            raise CheckpointError(f"{source}: truncated data for tensor {name!r} "
                                  f"(needs bytes {off}..{off + nbytes}, payload has {len(payload)})")
        tensors[name] = np.frombuffer(payload[off:off + nbytes], dtype="<f4").reshape(shape).copy()
        end = max(end, off + nbytes)
    if end != len(payload):
        raise CheckpointError(f"{source}: {len(payload) - end} trailing bytes after tensor data")
    return tensors, manifest["config"]


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}")
    return loads_checkpoint(path.read_bytes(), str(path))
