"""Standalone FOT1 tensor codec (magic, dtype code u8, rank u32, dims u32...,
little-endian payload).  Deliberately independent of any consumer's
implementation so bundle round-trips act as a cross-check of the format."""
import struct

import numpy as np

MAGIC = b"FOT1"
CODES = {0: "<f4", 1: "<u2", 2: "u1", 3: "<i4"}
DTYPES = {np.dtype(v): k for k, v in CODES.items()}


def save(path, arr) -> None:
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in DTYPES:
        raise ValueError(f"dtype {arr.dtype} not representable (f32/u16/u8/i32)")
    if arr.ndim < 1 or any(d < 1 for d in arr.shape):
        raise ValueError(f"bad shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BI", DTYPES[dt], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype(dt, copy=False).tobytes())


def load(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(9)
        if head[:4] != MAGIC:
            raise ValueError(f"{path}: bad magic")
        code, rank = struct.unpack("<BI", head[4:])
        shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
        payload = f.read()
    dt = np.dtype(CODES[code])
    n = int(np.prod(shape))
    if len(payload) != n * dt.itemsize:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype=dt).reshape(shape).copy()
