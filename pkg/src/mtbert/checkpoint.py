"""Versioned flat-binary checkpoints: magic, JSON manifest, raw float64 tensors."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"MTBCKPT\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def save_checkpoint(path: str | Path, params: dict, meta: dict | None = None) -> None:
    """Write named tensors (arrays or Tensors) in name order, little-endian float64."""
    arrays = {}
    for name in sorted(params):
        v = params[name]
        arrays[name] = np.asarray(getattr(v, "data", v), dtype="<f8", order="C")
    entries, offset = [], 0
    for name, a in arrays.items():
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(manifest)))
        fh.write(manifest)
        for a in arrays.values():
            fh.write(a.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise DataError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    start = _HEADER.size + mlen
    manifest = json.loads(blob[_HEADER.size:start].decode("utf-8"))
    out = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        lo = start + e["offset"]
        if lo + 8 * n > len(blob):
            raise DataError(f"{path}: tensor {e['name']} runs past end of file")
        out[e["name"]] = np.frombuffer(blob, dtype="<f8", count=n, offset=lo).reshape(tuple(e["shape"])).copy()
    return out, manifest["meta"]
