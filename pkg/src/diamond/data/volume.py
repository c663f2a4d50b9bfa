"""DMVOL1 volume files.

``b"DMVOL1"`` + 2 zero bytes, then H, W, D as little-endian uint32, then
H*W*D little-endian float32 voxels in row-major [H][W][D] order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..backbone import Volume
from ..errors import (
    VolumeDimensionError,
    VolumeFormatError,
    VolumeRangeError,
    VolumeTruncatedError,
)

MAGIC = b"DMVOL1\x00\x00"
HEADER = struct.Struct("<III")
MAX_VOXELS = 1 << 30


def encode_volume(v: Volume | np.ndarray) -> bytes:
    voxels = v.voxels if isinstance(v, Volume) else np.asarray(v)
    if voxels.ndim != 3 or min(voxels.shape) < 1:
        raise VolumeDimensionError(f"volume must have three positive extents, got {voxels.shape}")
    if not np.isfinite(voxels).all() or voxels.min() < 0.0 or voxels.max() > 1.0:
        raise VolumeRangeError("voxels must be finite and lie in [0, 1]")
    payload = np.ascontiguousarray(voxels, dtype="<f4").tobytes()
    return MAGIC + HEADER.pack(*voxels.shape) + payload


def decode_volume(data: bytes) -> Volume:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise VolumeFormatError("bad magic: not a DMVOL1 file")
    if len(data) < len(MAGIC) + HEADER.size:
        raise VolumeTruncatedError("header is truncated")
    h, w, d = HEADER.unpack_from(data, len(MAGIC))
    if min(h, w, d) < 1:
        raise VolumeDimensionError(f"header declares a zero extent ({h}, {w}, {d})")
    count = h * w * d
    if count > MAX_VOXELS:
        raise VolumeDimensionError(f"header declares {count} voxels, above the {MAX_VOXELS} limit")
    payload = memoryview(data)[len(MAGIC) + HEADER.size :]
    expected = count * 4
    if len(payload) < expected:
        raise VolumeTruncatedError(f"payload holds {len(payload)} bytes, header needs {expected}")
    if len(payload) > expected:
        raise VolumeDimensionError(f"payload holds {len(payload)} bytes, more than the {expected} declared")
    voxels = np.frombuffer(payload, dtype="<f4").reshape(h, w, d).astype(np.float32)
    if not np.isfinite(voxels).all():
        raise VolumeRangeError("file contains non-finite voxels")
    if voxels.min() < 0.0 or voxels.max() > 1.0:
        raise VolumeRangeError("file contains voxels outside [0, 1]")
    return Volume(voxels)


def save_volume(v: Volume | np.ndarray, path) -> None:
    Path(path).write_bytes(encode_volume(v))


def load_volume(path) -> Volume:
    return decode_volume(Path(path).read_bytes())
