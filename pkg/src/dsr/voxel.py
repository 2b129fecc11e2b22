"""Voxel grid geometry, volume containers and trilinear kernels.

Memory layout: every per-voxel array is indexed ``[x, y, z]`` in C order, so
``z`` varies fastest. Multi-channel mask volumes put the channel axis first,
``probs[c, x, y, z]``; vector volumes put the component axis last,
``values[x, y, z, 3]``.

Integer voxel coordinates refer to voxel *centers*. ``GridSpec.origin`` is the
outer corner of voxel (0, 0, 0), so the center of voxel ``i`` along an axis is
``origin + (i + 0.5) * voxel_size``.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelMismatch, GridMismatch, NonFiniteFlow


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, int, int] = (128, 128, 48)
    voxel_size: float = 0.004
    origin: tuple[float, float, float] = (-0.256, -0.256, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive ints, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=float) * self.voxel_size

    def centers(self) -> np.ndarray:
        """World coordinates of every voxel center, shape (nx, ny, nz, 3).

        The returned array is shared between calls; do not modify it.
        """
        return _centers(self)

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.voxel_size

    def in_grid(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "voxel_size": self.voxel_size, "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(d["dims"]), d["voxel_size"], tuple(d["origin"]))


@functools.lru_cache(maxsize=8)
def _centers(spec: GridSpec) -> np.ndarray:
    axes = [spec.axis_centers(a) for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    grid.setflags(write=False)
    return grid


def world_to_voxel(spec: GridSpec, p) -> np.ndarray:
    """Continuous voxel coordinates of world point(s) ``p`` (shape (..., 3))."""
    p = np.asarray(p, dtype=float)
    return (p - np.asarray(spec.origin)) / spec.voxel_size - 0.5


def voxel_to_world(spec: GridSpec, c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return (c + 0.5) * spec.voxel_size + np.asarray(spec.origin)


def trilinear_weights(c, spec: GridSpec | None = None) -> list[tuple[tuple[int, int, int], float]]:
    """Trilinear splat/gather weights of continuous coordinate ``c``.

    Returns ``(index, weight)`` pairs for the lattice points with nonzero
    weight. When ``spec`` is given, indices outside the grid are dropped.
    """
    c = np.asarray(c, dtype=float)
    base = np.floor(c).astype(int)
    out = []
    for offset in itertools.product((0, 1), repeat=3):
        idx = base + np.asarray(offset)
        w = float(np.prod(np.maximum(0.0, 1.0 - np.abs(c - idx))))
        if w == 0.0:
            continue
        if spec is not None and not spec.in_grid(idx):
            continue
        out.append((tuple(int(i) for i in idx), w))
    return out


def gather_trilinear(volume: "ScalarVolume", c) -> float:
    """Interpolate ``volume`` at continuous voxel coordinate ``c``.

    Out-of-grid neighbours are ignored and the remaining weights are
    renormalised; a point with no in-grid neighbour reads 0.
    """
    pairs = trilinear_weights(c, volume.spec)
    total = sum(w for _, w in pairs)
    if total == 0.0:
        return 0.0
    return sum(w * float(volume.values[idx]) for idx, w in pairs) / total


def _check_shape(values: np.ndarray, shape: tuple, what: str):
    if values.shape != shape:
        raise GridMismatch(f"{what} has shape {values.shape}, expected {shape}")


@dataclass
class ScalarVolume:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check_shape(self.values, self.spec.dims, "scalar volume")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar volume contains non-finite values")


@dataclass
class VectorVolume:
    """Per-voxel 3-vectors in meters, e.g. a scene flow field."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check_shape(self.values, (*self.spec.dims, 3), "vector volume")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteFlow("vector volume contains non-finite values")

    @classmethod
    def zeros(cls, spec: GridSpec) -> "VectorVolume":
        return cls(spec, np.zeros((*spec.dims, 3)))


SceneFlowVolume = VectorVolume


@dataclass
class TsdfVolume:
    """Truncated signed distance observation.

    ``values`` are signed distances divided by the truncation distance and
    clamped to [-1, 1]; positive is in front of the observed surface.
    ``observed`` is False where the voxel did not project onto a valid depth
    pixel, in which case the value is meaningless (stored as -1).
    """

    spec: GridSpec
    values: np.ndarray
    observed: np.ndarray
    truncation: float = 0.02

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        _check_shape(self.values, self.spec.dims, "tsdf values")
        _check_shape(self.observed, self.spec.dims, "tsdf observed flags")


@dataclass
class InstanceMaskVolume:
    """Per-voxel probability over ``k`` channels; channel ``k - 1`` is empty space.

    ``probs`` is treated as immutable once constructed (hardened labels are cached).
    """

    spec: GridSpec
    probs: np.ndarray
    _labels: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 4 or self.probs.shape[1:] != self.spec.dims:
            raise GridMismatch(f"mask volume has shape {self.probs.shape}, expected (k, {self.spec.dims})")
        if self.probs.shape[0] < 2:
            raise ChannelMismatch("a mask volume needs at least one object channel and background")

    @property
    def k(self) -> int:
        return self.probs.shape[0]

    @property
    def background(self) -> int:
        return self.k - 1

    def validate(self, tol: float = 1e-6):
        p = self.probs
        if not np.all(np.isfinite(p)):
            raise ValueError("mask volume contains non-finite values")
        if p.min() < -tol or p.max() > 1 + tol:
            raise ValueError("mask probabilities outside [0, 1]")
        s = p.sum(axis=0)
        if np.abs(s - 1).max() > tol:
            raise ValueError("mask probabilities do not sum to one")

    def labels(self) -> np.ndarray:
        """Hardened per-voxel channel index (argmax, lowest index wins ties)."""
        if self._labels is None:
            self._labels = np.argmax(self.probs, axis=0)
            self._labels.flags.writeable = False
        return self._labels

    def object_mass(self) -> np.ndarray:
        """Probability that each voxel belongs to any object channel."""
        return self.probs[:-1].sum(axis=0)

    @classmethod
    def background_only(cls, spec: GridSpec, k: int) -> "InstanceMaskVolume":
        probs = np.zeros((k, *spec.dims))
        probs[k - 1] = 1.0
        return cls(spec, probs)

    @classmethod
    def from_labels(cls, spec: GridSpec, labels: np.ndarray, k: int) -> "InstanceMaskVolume":
        out = cls(spec, one_hot(labels, k))
        lab = np.asarray(labels).astype(np.int64)
        lab.flags.writeable = False
        out._labels = lab
        return out


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((k, *labels.shape))
    for c in range(k):
        out[c][labels == c] = 1.0
    return out


def check_same_grid(*volumes):
    specs = {v.spec for v in volumes}
    if len(specs) != 1:
        raise GridMismatch(f"volumes live on different grids: {specs}")


def check_same_k(*masks: InstanceMaskVolume):
    ks = {m.k for m in masks}
    if len(ks) != 1:
        raise ChannelMismatch(f"mask volumes have different channel counts: {sorted(ks)}")
