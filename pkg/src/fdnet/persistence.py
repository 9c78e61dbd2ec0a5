"""Flat binary parameter files.

Layout (little-endian): magic ``FDNK``, u32 version, then one record per
tensor until end of file: u16 name length, UTF-8 name, u8 rank, u32 per
dimension, float64 payload in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FDNK"
VERSION = 1


class FormatError(ValueError):
    pass


def dumps(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(state):
        arr = np.asarray(state[name], dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"{name}: rank {arr.ndim} too large")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not an FDNK parameter file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported FDNK version {version}")
    pos, state = 8, {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(blob):
                raise FormatError(f"{name}: truncated payload")
            state[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise FormatError(f"truncated record at byte {pos}") from exc
    return state


def save(path: str | Path, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(state))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
