"""Parameter checkpoints: a JSON header plus one little-endian payload.

``<prefix>.json`` lists every tensor (name, shape, byte offset) in the
network's parameter order; ``<prefix>.bin`` holds the tensors back to back.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from ..errors import VolumeIOError

__all__ = ["save_parameters", "load_parameters", "CHECKPOINT_FORMAT"]

CHECKPOINT_FORMAT = "sdmseg-params/1"
_CODES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _write_atomic(path: Path, blob: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_parameters(prefix, params, config: dict | None = None) -> None:
    """``params`` maps names to arrays or tensors; order is preserved."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: np.asarray(getattr(v, "data", v)) for k, v in params.items()}
    code = "f64" if any(a.dtype == np.float64 for a in arrays.values()) else "f32"
    entries, chunks, offset = [], [], 0
    for name, a in arrays.items():
        blob = a.astype(_CODES[code]).tobytes(order="C")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(blob)
        offset += len(blob)
    header = {"format": CHECKPOINT_FORMAT, "dtype": code, "tensors": entries, "config": config}
    _write_atomic(prefix.with_suffix(".bin"), b"".join(chunks))
    _write_atomic(prefix.with_suffix(".json"), (json.dumps(header, indent=1) + "\n").encode())


def load_parameters(prefix) -> tuple[dict[str, np.ndarray], dict | None]:
    prefix = Path(prefix)
    try:
        header = json.loads(prefix.with_suffix(".json").read_text())
    except json.JSONDecodeError as exc:
        raise VolumeIOError(f"bad checkpoint header: {exc}", field="header") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise VolumeIOError(f"not a checkpoint header: {header.get('format')!r}", field="format")
    dt = _CODES.get(header.get("dtype"))
    if dt is None:
        raise VolumeIOError(f"unknown checkpoint dtype {header.get('dtype')!r}", field="dtype")
    blob = prefix.with_suffix(".bin").read_bytes()
    out = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + n * dt.itemsize
        if end > len(blob):
            raise VolumeIOError(f"payload truncated at tensor {e['name']!r}", field="tensors")
        arr = np.frombuffer(blob, dtype=dt, count=n, offset=e["offset"]).reshape(e["shape"])
        out[e["name"]] = arr.astype(dt.newbyteorder("="))
    return out, header.get("config")
