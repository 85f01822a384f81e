"""Versioned JSON checkpoint files.

Layout::

    {"format": "gcgm-checkpoint", "version": 1, "byteorder": "little",
     "payload": {...}}

Inside the payload, numpy arrays are stored as
``{"__ndarray__": <base64 of little-endian bytes>, "dtype": "<f8", "shape": [...]}``
so floating-point values round-trip exactly.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

FORMAT = "gcgm-checkpoint"
VERSION = 1


def _encode(obj):
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|",) else arr.dtype
        arr = arr.astype(dtype, copy=False)
        return {
            "__ndarray__": base64.b64encode(arr.tobytes()).decode("ascii"),
            "dtype": dtype.str,
            "shape": list(arr.shape),
        }
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            raw = base64.b64decode(obj["__ndarray__"])
            return np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def save_checkpoint(path: str | Path, payload: dict) -> None:
    doc = {"format": FORMAT, "version": VERSION, "byteorder": "little", "payload": _encode(payload)}
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a gcgm checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    return _decode(doc["payload"])
