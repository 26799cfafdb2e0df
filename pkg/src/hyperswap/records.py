"""On-disk formats: JSON-lines metrics/events, binary checkpoints, atomic writes.

Checkpoint layout (all little-endian)::

    offset  size  field
    0       8     magic b"HSWPCKPT"
    8       4     u32 format version (1)
    12      4     u32 replica id
    16      4     u32 ladder slot
    20      8     u64 step
    28      4     u32 n = number of layer sizes in the layout descriptor
    32      4n    u32 layer sizes (MLP: input, hidden..., output; potential: [dim])
    32+4n   8     u64 number of weights
    40+4n   8k    f64 weights
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CKPT_MAGIC = b"HSWPCKPT"
CKPT_VERSION = 1


def write_atomic(path, data) -> None:
    """Write bytes or text to ``path`` via a temp file in the same directory + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode() if isinstance(data, str) else data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(rows) -> str:
    return "".join(json.dumps(r, allow_nan=True) + "\n" for r in rows)


def read_jsonl(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


class JsonlSink:
    """Single-writer append channel into ``<final>.part``; :meth:`commit`
    renames it into place, :meth:`abandon` keeps it as ``*.partial.jsonl``."""

    def __init__(self, final_path):
        self.final = Path(final_path)
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.part = self.final.with_name(self.final.name + ".part")
        self._f = open(self.part, "w")

    def write(self, row: dict) -> None:
        self._f.write(json.dumps(row) + "\n")

    def commit(self) -> Path:
        self._f.close()
        os.replace(self.part, self.final)
        return self.final

    def abandon(self) -> Path:
        self._f.close()
        dest = self.final.with_name(self.final.stem + ".partial" + self.final.suffix)
        os.replace(self.part, dest)
        return dest


@dataclass(frozen=True)
class Checkpoint:
    replica_id: int
    slot: int
    step: int
    layer_sizes: tuple[int, ...]
    weights: np.ndarray


def encode_checkpoint(ck: Checkpoint) -> bytes:
    w = np.ascontiguousarray(ck.weights, dtype="<f8")
    sizes = tuple(int(s) for s in ck.layer_sizes)
    head = struct.pack("<8sIIIQI", CKPT_MAGIC, CKPT_VERSION, ck.replica_id, ck.slot, ck.step, len(sizes))
    return head + struct.pack(f"<{len(sizes)}I", *sizes) + struct.pack("<Q", w.size) + w.tobytes()


def decode_checkpoint(buf: bytes) -> Checkpoint:
    fixed = struct.calcsize("<8sIIIQI")
    if len(buf) < fixed:
        raise ValueError("checkpoint truncated in header")
    magic, version, rid, slot, step, n = struct.unpack_from("<8sIIIQI", buf, 0)
    if magic != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = fixed
    sizes = struct.unpack_from(f"<{n}I", buf, off)
    off += 4 * n
    (k,) = struct.unpack_from("<Q", buf, off)
    off += 8
    if len(buf) != off + 8 * k:
        raise ValueError(f"checkpoint payload is {len(buf) - off} bytes, expected {8 * k}")
    w = np.frombuffer(buf, dtype="<f8", count=k, offset=off).astype(np.float64)
    return Checkpoint(rid, slot, step, tuple(sizes), w)


def save_checkpoint(path, ck: Checkpoint) -> None:
    write_atomic(path, encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
