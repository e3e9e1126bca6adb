"""Versioned binary checkpoint: named f32 tensors, little-endian, bit-exact.

Layout (all little-endian):
    magic   4 bytes  b"ABCK"
    version u16      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u16, name utf-8
        ndim     u8,  dims u32 each
        payload  f32 values, row-major
Tensors are written in sorted name order so identical weights always
produce identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"ABCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    off = 4
    version, count = struct.unpack_from("<HI", data, off)
    off += 6
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        end = off + 4 * n
        if end > len(data):
            raise CheckpointError(
                f"truncated checkpoint: tensor {name!r} needs {4 * n} bytes "
                f"at offset {off}, file has {len(data) - off}"
            )
        tensors[name] = np.frombuffer(
            data[off:end], dtype="<f4"
        ).reshape(shape).copy()
        off = end
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes after tensors")
    return tensors
