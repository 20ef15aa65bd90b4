"""Checkpoint files: a JSON manifest next to one little-endian float32 blob.

Manifest layout::

    {"blob": "<file>.bin",
     "meta": {...},
     "tensors": [{"name": ..., "shape": [...], "dtype": "float32", "offset": <bytes>}, ...]}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPE = np.dtype("<f4")


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    """Write ``path`` (manifest, ``.json``) and its sibling ``.bin`` blob."""
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    blob_path = path.with_suffix(".bin")
    entries = []
    offset = 0
    chunks = []
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name], dtype=_DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(b"".join(chunks))
    manifest = {"blob": blob_path.name, "meta": meta or {}, "tensors": entries}
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors as float64 arrays, meta)``."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    blob = (path.parent / manifest["blob"]).read_bytes()
    tensors = {}
    for entry in manifest["tensors"]:
        if entry["dtype"] != "float32":
            raise ValueError(f"unsupported dtype {entry['dtype']!r} for {entry['name']}")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return tensors, manifest.get("meta", {})
