"""Checkpoint serialization.

Binary layout (all integers little-endian):

    magic  b"NOVA"
    version u8 (= 1)
    step    u64
    config_hash u64
    n_records u32
    records, each:
        name_len u32, name utf-8,
        ndim u32, dims u32 * ndim,
        payload_len u64, payload float32 little-endian
    crc32 u32 over the whole records region

Tensors are stored exactly as float32 bytes, so a save/load round trip of
float32 training state is bit-exact. Any structural problem (bad magic,
version, truncation, checksum mismatch) raises CheckpointError before any
state is returned.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"NOVA"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class CheckpointState:
    step: int
    config_hash: int
    tensors: dict  # name -> float32 ndarray


def save_checkpoint(state: CheckpointState, path) -> None:
    """Write atomically (temp file + rename) so a crash cannot leave a
    partially written checkpoint at the target path."""
    path = Path(path)
    body = bytearray()
    for name in sorted(state.tensors):
        arr = np.asarray(state.tensors[name], dtype="<f4")
        if arr.ndim and not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d
            arr = np.ascontiguousarray(arr)
        name_bytes = name.encode("utf-8")
        body += struct.pack("<I", len(name_bytes)) + name_bytes
        body += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload = arr.tobytes()
        body += struct.pack("<Q", len(payload)) + payload
    header = MAGIC + struct.pack("<BQQI", VERSION, state.step, state.config_hash, len(state.tensors))
    blob = header + bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> CheckpointState:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    step, config_hash, n_records = r.unpack("<QQI")
    body_start = r.pos
    tensors = {}
    for _ in range(n_records):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        (payload_len,) = r.unpack("<Q")
        expected = int(np.prod(dims, dtype=np.int64)) * 4  # empty dims -> scalar, 4 bytes
        if payload_len != expected:
            raise CheckpointError(f"{path}: record {name!r} payload length mismatch")
        payload = r.take(payload_len)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    body_end = r.pos
    (crc_stored,) = r.unpack("<I")
    if r.pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after checksum")
    if zlib.crc32(data[body_start:body_end]) != crc_stored:
        raise CheckpointError(f"{path}: checksum mismatch, file corrupted")
    return CheckpointState(step=step, config_hash=config_hash, tensors=tensors)
