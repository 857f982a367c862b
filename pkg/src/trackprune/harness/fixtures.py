"""Binary fixture (UTPF) and PGM mask I/O.

UTPF layout, little-endian: b"UTPF", u32 rows, u32 cols, rows*cols float32
row-major. Values are widened to float64 on load.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"UTPF"
_HEADER = struct.Struct("<4sII")


def write_fixture(path, matrix) -> None:
    m = np.asarray(matrix)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError("fixtures hold 2-D matrices")
    data = np.ascontiguousarray(m, dtype="<f4")
    Path(path).write_bytes(_HEADER.pack(MAGIC, *m.shape) + data.tobytes())


def read_fixture(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated fixture header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != rows * cols * 4:
        raise ValueError(f"{path}: expected {rows}x{cols} float32 payload, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_pgm(path, image) -> None:
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(raw[-w * h :], dtype=np.uint8).reshape(h, w)
