"""Binary file formats for motion and video-feature arrays.

Both formats are a fixed-size little-endian header followed by row-major
float32 data:

    motion   header: magic b"RGMO", version u32, n_frames u32, dim u32,
             n_joints u32, fps f32
    feature  header: magic b"RGVF", version u32, n_frames u32, dim u32

Headers are validated on read; truncated or oversized bodies raise
CorruptFileError naming the expected and observed sizes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MOTION_MAGIC = b"RGMO"
FEATURE_MAGIC = b"RGVF"
FORMAT_VERSION = 1

_MOTION_HEADER = struct.Struct("<4sIIIIf")
_FEATURE_HEADER = struct.Struct("<4sIII")


class CorruptFileError(ValueError):
    """A binary file failed header or size validation."""


def write_motion_array(path, features: np.ndarray, n_joints: int, fps: float) -> None:
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"motion array must be 2-D, got shape {arr.shape}")
    header = _MOTION_HEADER.pack(MOTION_MAGIC, FORMAT_VERSION,
                                 arr.shape[0], arr.shape[1], n_joints, fps)
    Path(path).write_bytes(header + arr.tobytes())


def read_motion_array(path) -> tuple[np.ndarray, int, float]:
    """Returns (features (n, d) float32, n_joints, fps)."""
    raw = Path(path).read_bytes()
    if len(raw) < _MOTION_HEADER.size:
        raise CorruptFileError(f"{path}: file shorter than header")
    magic, version, n, d, n_joints, fps = _MOTION_HEADER.unpack_from(raw)
    if magic != MOTION_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}")
    body = raw[_MOTION_HEADER.size:]
    expected = n * d * 4
    if len(body) != expected:
        raise CorruptFileError(
            f"{path}: header promises {n}x{d} floats ({expected} bytes), "
            f"body has {len(body)} bytes")
    features = np.frombuffer(body, dtype="<f4").reshape(n, d).copy()
    return features, n_joints, fps


def write_feature_array(path, local: np.ndarray) -> None:
    arr = np.ascontiguousarray(local, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"feature array must be 2-D, got shape {arr.shape}")
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION,
                                  arr.shape[0], arr.shape[1])
    Path(path).write_bytes(header + arr.tobytes())


def read_feature_array(path) -> np.ndarray:
    """Returns the stored (n_frames, dim) float32 matrix."""
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise CorruptFileError(f"{path}: file shorter than header")
    magic, version, t, d = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}")
    body = raw[_FEATURE_HEADER.size:]
    expected = t * d * 4
    if len(body) != expected:
        raise CorruptFileError(
            f"{path}: header promises {t}x{d} floats ({expected} bytes), "
            f"body has {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(t, d).copy()
