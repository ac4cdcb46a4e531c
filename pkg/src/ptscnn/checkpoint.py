"""Binary checkpoint format for named parameter arrays.

Layout (all integers little-endian uint32, values little-endian float64):

    magic   8 bytes  b"PTSCCKPT"
    version u32      currently 1
    count   u32      number of entries
    entry*  name_len u32, name bytes (utf-8), rank u32, extents u32 * rank,
            values f64 * prod(extents)

Arrays are stored as float64 regardless of the runtime precision so that
checkpoints written in 64-bit mode are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTSCCKPT"
VERSION = 1


def save_checkpoint(path, arrays: list[tuple[str, np.ndarray]]) -> None:
    """Write an ordered list of (name, array) pairs."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays:
        raw = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> list[tuple[str, np.ndarray]]:
    """Read back the ordered (name, float64 array) pairs."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    out: list[tuple[str, np.ndarray]] = []
    off = 16
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out.append((name, arr.copy()))
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes")
    return out
