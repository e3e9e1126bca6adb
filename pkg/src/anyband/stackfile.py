"""Band-stack container file (.sbsf): bit-exact binary raster format.

Layout, all little-endian, planes row-major:
    magic    4 bytes  b"SBSF"
    version  u16      currently 1
    n_bands  u32
    height   u32
    width    u32
    n_bands descriptor triplets, 3 x f32 (min, central, max; nm)
    n_bands planes of height*width f32
    mask flag u8 (0 absent / 1 present)
    optional height*width u8 mask {0 clear, 1 cloud, 255 nodata}
"""

from __future__ import annotations

import struct

import numpy as np

from .descriptors import BandDescriptor
from .encoder import SpectralStack

MAGIC = b"SBSF"
VERSION = 1
_HEADER = struct.Struct("<HIII")


class StackParseError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def write_stack_bytes(stack: SpectralStack) -> bytes:
    n, h, w = stack.planes.shape
    parts = [MAGIC, _HEADER.pack(VERSION, n, h, w)]
    for d in stack.descriptors:
        parts.append(struct.pack("<3f", d.lambda_min_nm, d.lambda_central_nm,
                                 d.lambda_max_nm))
    parts.append(np.ascontiguousarray(stack.planes, dtype="<f4").tobytes())
    if stack.mask is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(np.ascontiguousarray(stack.mask, dtype=np.uint8).tobytes())
    return b"".join(parts)


def write_stack(path, stack: SpectralStack):
    with open(path, "wb") as f:
        f.write(write_stack_bytes(stack))


def read_stack_bytes(data: bytes) -> SpectralStack:
    if len(data) < 4 or data[:4] != MAGIC:
        raise StackParseError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    off = 4
    if len(data) < off + _HEADER.size:
        raise StackParseError("truncated header", off)
    version, n, h, w = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    if version != VERSION:
        raise StackParseError(f"unsupported version {version}", 4)
    if n == 0 or h == 0 or w == 0:
        raise StackParseError(f"degenerate extents n={n} h={h} w={w}", 6)
    desc_bytes = 12 * n
    plane_bytes = 4 * n * h * w
    need = off + desc_bytes + plane_bytes + 1
    if len(data) < need:
        raise StackParseError(
            f"truncated payload: need at least {need} bytes, have {len(data)}",
            off,
        )
    descriptors = []
    for i in range(n):
        lo, mid, hi = struct.unpack_from("<3f", data, off)
        try:
            descriptors.append(BandDescriptor(lo, mid, hi))
        except ValueError as e:
            raise StackParseError(f"band {i}: {e}", off) from e
        off += 12
    planes = np.frombuffer(data, dtype="<f4", count=n * h * w,
                           offset=off).reshape(n, h, w).copy()
    off += plane_bytes
    mask_flag = data[off]
    off += 1
    mask = None
    if mask_flag == 1:
        if len(data) < off + h * w:
            raise StackParseError(
                f"truncated mask: need {h * w} bytes, have {len(data) - off}",
                off,
            )
        mask = np.frombuffer(data, dtype=np.uint8, count=h * w,
                             offset=off).reshape(h, w).copy()
        off += h * w
    elif mask_flag != 0:
        raise StackParseError(f"bad mask flag {mask_flag}", off - 1)
    if off != len(data):
        raise StackParseError(f"{len(data) - off} trailing bytes", off)
    return SpectralStack(descriptors, planes, mask)


def read_stack(path) -> SpectralStack:
    with open(path, "rb") as f:
        return read_stack_bytes(f.read())
