"""Cache plumbing: stable config digests, atomic writes, compressed arrays.

Every intermediate artifact is keyed by (video id, stage, config digest) in
its path, so a parameter change invalidates exactly the stages it affects.
Writes go through write-temp-then-rename so concurrent workers and interrupted
runs never leave half-written artifacts behind.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import zlib
from pathlib import Path

import numpy as np


def digest_payload(payload: object, length: int = 12) -> str:
    """Stable short hash of a JSON-serializable payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:length]


def derive_seed(*parts: object) -> int:
    """Deterministic 63-bit seed from arbitrary labeled parts."""
    blob = json.dumps(list(parts), sort_keys=True, default=str)
    return int.from_bytes(hashlib.sha256(blob.encode()).digest()[:8], "little") >> 1


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str | Path, payload: object) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def save_compressed_array(path: str | Path, array: np.ndarray, *, level: int = 1) -> None:
    """Write an array as zlib-compressed .npy bytes (fast, deterministic)."""
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(array))
    atomic_write_bytes(path, zlib.compress(buf.getvalue(), level))


def load_compressed_array(path: str | Path) -> np.ndarray:
    data = zlib.decompress(Path(path).read_bytes())
    return np.load(io.BytesIO(data))
