"""On-disk formats: binary volumes, depth images and versioned JSON records.

Volume file layout (all little-endian)::

    magic    4s   b"DSRV"
    version  u16
    kind     u16  (see VolumeKind)
    channels u32
    dtype    u32  0 = float32, 1 = uint8
    dims     3 x u32   (nx, ny, nz)
    voxel    f64       voxel size, meters
    origin   3 x f64   world position of the corner of voxel (0, 0, 0)
    data     C-ordered array, shape depending on kind:
               SCALAR  (nx, ny, nz)
               VECTOR  (nx, ny, nz, 3)
               MASK    (k, nx, ny, nz)      float probabilities
               LABEL   (nx, ny, nz)         uint8 channel index, k in `channels`
               TSDF    (2, nx, ny, nz)      value, observed flag
               ACTION  (8, nx, ny, 1)       one-hot push action map

Paths ending in ``.gz`` are gzip-wrapped with a zero timestamp, so identical
content gives identical bytes.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import struct
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import SchemaVersionError
from .voxel import GridSpec, InstanceMaskVolume, ScalarVolume, TsdfVolume, VectorVolume

SCHEMA_VERSION = 1
VOLUME_MAGIC = b"DSRV"
DEPTH_MAGIC = b"DSRD"

_HEADER = struct.Struct("<4sHHII")
_GRID = struct.Struct("<3Id3d")


class VolumeKind(IntEnum):
    SCALAR = 1
    VECTOR = 2
    MASK = 3
    LABEL = 4
    TSDF = 5
    ACTION = 6


def _write_bytes(path, payload: bytes):
    path = Path(path)
    if path.suffix == ".gz":
        buf = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0, compresslevel=6) as gz:
            gz.write(payload)
        payload = buf.getvalue()
    path.write_bytes(payload)


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def encode_volume(kind: VolumeKind, spec: GridSpec, data: np.ndarray, channels: int) -> bytes:
    dtype_code = 1 if kind == VolumeKind.LABEL else 0
    arr = np.ascontiguousarray(data, dtype="<u1" if dtype_code else "<f4")
    header = _HEADER.pack(VOLUME_MAGIC, SCHEMA_VERSION, int(kind), channels, dtype_code)
    grid = _GRID.pack(*spec.dims, spec.voxel_size, *spec.origin)
    return header + grid + arr.tobytes()


def decode_volume(raw: bytes) -> tuple[VolumeKind, GridSpec, np.ndarray, int]:
    magic, version, kind, channels, dtype_code = _HEADER.unpack_from(raw, 0)
    if magic != VOLUME_MAGIC:
        raise ValueError(f"not a volume file (magic {magic!r})")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"volume schema version {version} unsupported (expected {SCHEMA_VERSION})")
    off = _HEADER.size
    nx, ny, nz, voxel, ox, oy, oz = _GRID.unpack_from(raw, off)
    off += _GRID.size
    kind = VolumeKind(kind)
    spec = GridSpec((nx, ny, nz), voxel, (ox, oy, oz))
    shape = {
        VolumeKind.SCALAR: (nx, ny, nz),
        VolumeKind.VECTOR: (nx, ny, nz, 3),
        VolumeKind.MASK: (channels, nx, ny, nz),
        VolumeKind.LABEL: (nx, ny, nz),
        VolumeKind.TSDF: (2, nx, ny, nz),
        VolumeKind.ACTION: (channels, nx, ny, nz),
    }[kind]
    dtype = "<u1" if dtype_code == 1 else "<f4"
    arr = np.frombuffer(raw, dtype=dtype, offset=off)
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"volume payload has {arr.size} values, expected {int(np.prod(shape))}")
    return kind, spec, arr.reshape(shape), channels


def write_volume(path, volume):
    """Write a ScalarVolume, VectorVolume, TsdfVolume or InstanceMaskVolume."""
    if isinstance(volume, InstanceMaskVolume):
        payload = encode_volume(VolumeKind.MASK, volume.spec, volume.probs, volume.k)
    elif isinstance(volume, TsdfVolume):
        data = np.stack([volume.values, volume.observed.astype(float)])
        payload = encode_volume(VolumeKind.TSDF, volume.spec, data, 2)
    elif isinstance(volume, VectorVolume):
        payload = encode_volume(VolumeKind.VECTOR, volume.spec, volume.values, 3)
    elif isinstance(volume, ScalarVolume):
        payload = encode_volume(VolumeKind.SCALAR, volume.spec, volume.values, 1)
    else:
        raise TypeError(f"cannot serialise {type(volume).__name__}")
    _write_bytes(path, payload)


def write_labels(path, spec: GridSpec, labels: np.ndarray, k: int):
    """One-hot mask stored compactly as a per-voxel uint8 channel index."""
    _write_bytes(path, encode_volume(VolumeKind.LABEL, spec, labels, k))


def write_action_map(path, action_map: np.ndarray, spec: GridSpec):
    nd, nx, ny = action_map.shape
    flat = GridSpec((nx, ny, 1), spec.voxel_size, spec.origin)
    _write_bytes(path, encode_volume(VolumeKind.ACTION, flat, action_map[..., None], nd))


def read_volume(path):
    """Read any volume file back into its in-memory type.

    LABEL files come back as a one-hot InstanceMaskVolume; ACTION files as a
    plain (8, nx, ny) array.
    """
    kind, spec, arr, channels = decode_volume(_read_bytes(path))
    if kind == VolumeKind.SCALAR:
        return ScalarVolume(spec, arr.astype(float))
    if kind == VolumeKind.VECTOR:
        return VectorVolume(spec, arr.astype(float))
    if kind == VolumeKind.MASK:
        return InstanceMaskVolume(spec, arr.astype(float))
    if kind == VolumeKind.LABEL:
        return InstanceMaskVolume.from_labels(spec, arr, channels)
    if kind == VolumeKind.TSDF:
        return TsdfVolume(spec, arr[0].astype(float), arr[1] > 0.5)
    return arr[..., 0].astype(float)


def write_depth(path, depth: np.ndarray):
    h, w = depth.shape
    header = _HEADER.pack(DEPTH_MAGIC, SCHEMA_VERSION, 0, w, h)
    _write_bytes(path, header + np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    raw = _read_bytes(path)
    magic, version, _, w, h = _HEADER.unpack_from(raw, 0)
    if magic != DEPTH_MAGIC:
        raise ValueError(f"not a depth file (magic {magic!r})")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"depth schema version {version} unsupported")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(h, w).astype(float)


def dumps_record(record: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **record}, sort_keys=True, indent=1)


def write_json(path, record: dict):
    Path(path).write_text(dumps_record(record) + "\n")


def check_version(record: dict, source="record") -> dict:
    version = record.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{source}: schema version {version!r} unsupported (expected {SCHEMA_VERSION})")
    return record


def read_json(path) -> dict:
    return check_version(json.loads(Path(path).read_text()), str(path))


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
