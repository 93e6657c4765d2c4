"""Policy checkpoint file format.

Layout (all integers little-endian)::

    8 bytes   magic b"SRPOLICY"
    u16       format version (currently 1)
    u32       architecture descriptor length, then that many bytes of
              UTF-8 JSON with sorted keys
    u64       parameter count
    f32[n]    flat parameter vector
    8 bytes   BLAKE2b-64 digest of everything above

Round-trips are bit-exact: the flat float32 vector is stored verbatim.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SRPOLICY"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Malformed checkpoint file."""


class ChecksumError(CheckpointError):
    """Stored digest does not match the file contents."""


class ArchitectureError(CheckpointError):
    """Checkpoint architecture differs from the expected one."""


@dataclass
class PolicyParams:
    """Flat parameter vector plus the architecture it belongs to."""

    arch: dict
    values: np.ndarray  # float32, flat

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)


def _digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def save_policy(params: PolicyParams, path: str | Path) -> None:
    arch_json = json.dumps(params.arch, sort_keys=True).encode("utf-8")
    payload = b"".join(
        [
            MAGIC,
            struct.pack("<H", FORMAT_VERSION),
            struct.pack("<I", len(arch_json)),
            arch_json,
            struct.pack("<Q", params.values.size),
            params.values.astype("<f4", copy=False).tobytes(),
        ]
    )
    Path(path).write_bytes(payload + _digest(payload))


def load_policy(path: str | Path, expected_arch: dict | None = None) -> PolicyParams:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a policy checkpoint (bad magic)")
    payload, digest = data[:-8], data[-8:]
    if _digest(payload) != digest:
        raise ChecksumError(f"{path}: checksum mismatch (file truncated or corrupted)")

    offset = len(MAGIC)
    (version,) = struct.unpack_from("<H", payload, offset)
    offset += 2
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (arch_len,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    arch = json.loads(payload[offset:offset + arch_len].decode("utf-8"))
    offset += arch_len
    (count,) = struct.unpack_from("<Q", payload, offset)
    offset += 8
    values = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).copy()
    if values.size != count or offset + 4 * count != len(payload):
        raise CheckpointError(f"{path}: parameter array length mismatch")

    if expected_arch is not None and arch != expected_arch:
        raise ArchitectureError(
            f"{path}: architecture mismatch: stored {arch}, expected {expected_arch}"
        )
    return PolicyParams(arch=arch, values=values)
