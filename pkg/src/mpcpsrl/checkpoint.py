"""Versioned, integrity-checked checkpoint container.

Layout: 8-byte magic, 2-byte big-endian format version, 32-byte SHA-256 of
the payload, then the pickled payload. The payload records the code version
and the hash of the config that produced it.
"""

from __future__ import annotations

import hashlib
import os
import pickle
import struct
from pathlib import Path

from . import __version__

MAGIC = b"PSRLCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct(">8sH32s")


class CheckpointError(RuntimeError):
    """Unreadable, corrupted or incompatible checkpoint."""


def save(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    body = pickle.dumps({**payload, "code_version": __version__}, protocol=pickle.HIGHEST_PROTOCOL)
    blob = _HEADER.pack(MAGIC, FORMAT_VERSION, hashlib.sha256(body).digest()) + body
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def load(path: str | Path) -> dict:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise CheckpointError("integrity error: checkpoint is truncated")
    magic, version, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("integrity error: not a psrl checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format {version} is not supported (expected {FORMAT_VERSION})")
    body = blob[_HEADER.size :]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("integrity error: checksum mismatch")
    payload = pickle.loads(body)
    if payload.get("code_version") != __version__:
        raise CheckpointError(
            f"checkpoint written by version {payload.get('code_version')}, this is {__version__}; refusing to resume"
        )
    return payload
