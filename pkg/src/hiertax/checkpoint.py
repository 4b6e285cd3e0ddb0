"""Binary checkpoint container.

Layout: magic ``HTAX``, u32 version, u32 length + UTF-8 JSON config, then
named arrays until end of file, each as u32 name length, name, u32 rank,
rank x u64 extents and the little-endian float64 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import CheckpointError

MAGIC = b"HTAX"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", self.version, len(meta)), meta]
        for name, arr in self.arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            key = name.encode("utf-8")
            parts.append(struct.pack("<II", len(key), arr.ndim) + key)
            parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic bytes)")
        pos = 4
        version, meta_len = _unpack(blob, pos, "<II")
        pos += 8
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
        meta = _take(blob, pos, meta_len)
        pos += meta_len
        try:
            config = json.loads(meta.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt config block: {exc}") from None
        arrays = {}
        while pos < len(blob):
            name_len, rank = _unpack(blob, pos, "<II")
            pos += 8
            name = _take(blob, pos, name_len).decode("utf-8")
            pos += name_len
            shape = _unpack(blob, pos, f"<{rank}Q")
            pos += 8 * rank
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            payload = _take(blob, pos, nbytes)
            pos += nbytes
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        return cls(config, arrays, version)


def _take(blob: bytes, pos: int, n: int) -> bytes:
    if pos + n > len(blob):
        raise CheckpointError(f"corrupt length: need {n} bytes at offset {pos}, file has {len(blob)}")
    return blob[pos : pos + n]


def _unpack(blob: bytes, pos: int, fmt: str) -> tuple:
    return struct.unpack(fmt, _take(blob, pos, struct.calcsize(fmt)))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())
