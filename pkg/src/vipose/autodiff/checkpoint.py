"""Tensor checkpoints: ``manifest.json`` plus a little-endian ``weights.bin`` blob.

Manifest layout::

    {"format": "vipose-tensors/1",
     "meta": {...},                         # caller-supplied JSON (e.g. network config)
     "tensors": {"visual.conv1.weight": {"shape": [16, 3, 7, 7], "dtype": "<f4", "offset": 0}, ...},
     "blob_bytes": 123456}

Tensors are stored back to back in manifest order, C-contiguous.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "vipose-tensors/1"
MANIFEST = "manifest.json"
BLOB = "weights.bin"


class CheckpointError(ValueError):
    """Missing, corrupt or inconsistent checkpoint."""


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, offset = {}, 0
    with open(path / BLOB, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = le.tobytes()
            entries[name] = {"shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset}
            fh.write(raw)
            offset += len(raw)
    doc = {"format": FORMAT, "meta": meta or {}, "tensors": entries, "blob_bytes": offset}
    (path / MANIFEST).write_text(json.dumps(doc, indent=1, sort_keys=False))
    return path


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        doc = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as e:
        raise CheckpointError(f"no checkpoint manifest at {path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt manifest at {path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT or "tensors" not in doc:
        raise CheckpointError(f"{path}: unrecognised manifest")
    try:
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"no weight blob at {path}") from e
    if len(blob) != doc.get("blob_bytes"):
        raise CheckpointError(f"{path}: blob has {len(blob)} bytes, manifest says {doc.get('blob_bytes')}")
    out = {}
    try:
        for name, e in doc["tensors"].items():
            dt = np.dtype(e["dtype"])
            count = int(np.prod(e["shape"], dtype=np.int64))
            end = e["offset"] + count * dt.itemsize
            if e["offset"] < 0 or end > len(blob):
                raise CheckpointError(f"{name}: byte range outside blob")
            arr = np.frombuffer(blob, dtype=dt, count=count, offset=e["offset"]).reshape(e["shape"])
            out[name] = arr.astype(dt.newbyteorder("="))
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: malformed tensor entry ({e})") from e
    return out, doc.get("meta", {})
