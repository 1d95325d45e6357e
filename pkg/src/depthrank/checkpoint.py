"""Binary parameter checkpoints.

Little-endian layout: 8-byte magic, uint32 version, uint32 tensor count,
then per tensor: uint32 name length, utf-8 name bytes, uint32 rank,
uint32 extents, raw float32 values in C order. Round-trips bit-exactly.
"""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"DRNKCKPT"
VERSION = 1


def save_checkpoint(path, named_tensors) -> None:
    """Write an ordered mapping of name -> array. Arrays must be float32."""
    items = list(named_tensors.items())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            arr = np.asarray(arr)
            if arr.dtype != np.float32:
                raise ValueError(
                    f"checkpoint values must be float32, got {arr.dtype} for {name!r}")
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes())


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise ValueError(f"checkpoint truncated while reading {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        return out
