"""SE(3) transforms, the mask-blended scene-flow layer and the motion loss.

Rotations are Euler vectors in the intrinsic X-Y-Z convention,
``R = Rx(a) @ Ry(b) @ Rz(c)``. Points are expressed in the world frame whose
origin sits at the workspace center on the table surface; rotations act
about that origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelMismatch, GridMismatch
from .voxel import GridSpec, InstanceMaskVolume, VectorVolume, check_same_grid


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def euler_to_matrix(euler) -> np.ndarray:
    a, b, g = euler
    return _rx(a) @ _ry(b) @ _rz(g)


def euler_partials(euler) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """dR/da, dR/db, dR/dg for the intrinsic X-Y-Z rotation."""
    a, b, g = euler
    rx, ry, rz = _rx(a), _ry(b), _rz(g)
    return _drx(a) @ ry @ rz, rx @ _dry(b) @ rz, rx @ ry @ _drz(g)


@dataclass(frozen=True)
class SE3Transform:
    euler: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        e = tuple(float(v) for v in self.euler)
        t = tuple(float(v) for v in self.translation)
        if len(e) != 3 or len(t) != 3 or not np.all(np.isfinite(e + t)):
            raise ValueError(f"invalid transform {e}, {t}")
        object.__setattr__(self, "euler", e)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SE3Transform":
        return cls()

    @property
    def is_identity(self) -> bool:
        return not any(self.euler) and not any(self.translation)

    def rotation(self) -> np.ndarray:
        return euler_to_matrix(self.euler)

    def apply(self, x) -> np.ndarray:
        """R x + t for point(s) of shape (..., 3)."""
        x = np.asarray(x, dtype=float)
        return x @ self.rotation().T + np.asarray(self.translation)

    def to_dict(self) -> dict:
        return {"euler": list(self.euler), "translation": list(self.translation)}

    @classmethod
    def from_dict(cls, d: dict) -> "SE3Transform":
        return cls(tuple(d["euler"]), tuple(d["translation"]))


def apply_se3(T: SE3Transform, x) -> np.ndarray:
    return T.apply(x)


@dataclass(frozen=True)
class TransformSet:
    """One transform per mask channel; the last (background) one is identity."""

    transforms: tuple[SE3Transform, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ts = tuple(self.transforms)
        if not ts:
            raise ValueError("empty transform set")
        if not ts[-1].is_identity:
            raise ValueError("the background transform must be the identity")
        object.__setattr__(self, "transforms", ts)

    @classmethod
    def identity(cls, k: int) -> "TransformSet":
        return cls(tuple(SE3Transform.identity() for _ in range(k)))

    @classmethod
    def from_objects(cls, k: int, moves: dict[int, SE3Transform]) -> "TransformSet":
        """Identity everywhere except the channels listed in ``moves``."""
        ts = [SE3Transform.identity() for _ in range(k)]
        for c, T in moves.items():
            if not 0 <= c < k - 1:
                raise ChannelMismatch(f"channel {c} is not an object channel for k={k}")
            ts[c] = T
        return cls(tuple(ts))

    @property
    def k(self) -> int:
        return len(self.transforms)

    def __getitem__(self, i) -> SE3Transform:
        return self.transforms[i]

    def __len__(self):
        return len(self.transforms)

    def to_list(self) -> list[dict]:
        return [T.to_dict() for T in self.transforms]

    @classmethod
    def from_list(cls, items) -> "TransformSet":
        return cls(tuple(SE3Transform.from_dict(d) for d in items))


def blended_points(probs: np.ndarray, transforms: TransformSet, points: np.ndarray) -> np.ndarray:
    """Flow of individual points: sum_i p_i (R_i x + t_i) - x.

    ``probs`` has shape (k, N), ``points`` (N, 3). Channels with no mass are
    skipped, which leaves the result bit-identical.
    """
    if probs.shape[0] != transforms.k:
        raise ChannelMismatch(f"{probs.shape[0]} mask channels but {transforms.k} transforms")
    acc = np.zeros_like(points, dtype=float)
    for i, T in enumerate(transforms.transforms):
        w = probs[i]
        if not np.any(w):
            continue
        moved = points @ T.rotation().T + np.asarray(T.translation)
        acc += w[:, None] * moved
    return acc - points


def moving_support(probs: np.ndarray, transforms: TransformSet) -> np.ndarray:
    """Points carrying mass on at least one non-identity channel."""
    sel = np.zeros(probs.shape[1], dtype=bool)
    for i, T in enumerate(transforms.transforms):
        if not T.is_identity:
            sel |= probs[i] > 0
    return sel


def blended_flow(masks: InstanceMaskVolume, transforms: TransformSet, spec: GridSpec | None = None) -> VectorVolume:
    """Voxel-wise scene flow from per-channel rigid motions blended by mask probability."""
    if spec is not None and spec != masks.spec:
        raise GridMismatch(f"mask grid {masks.spec} differs from requested grid {spec}")
    if masks.k != transforms.k:
        raise ChannelMismatch(f"{masks.k} mask channels but {transforms.k} transforms")
    grid = masks.spec
    probs = masks.probs.reshape(masks.k, -1)
    # Where only identity channels carry mass the flow is zero; evaluate the
    # blend on the remaining voxels alone.
    sel = np.flatnonzero(moving_support(probs, transforms))
    flow = np.zeros((grid.n_voxels, 3))
    if len(sel):
        pts = grid.centers().reshape(-1, 3)[sel]
        flow[sel] = blended_points(probs[:, sel], transforms, pts)
    return VectorVolume(grid, flow.reshape(*grid.dims, 3))


def flow_jacobian(m, transforms: TransformSet, x) -> np.ndarray:
    """Derivative of one voxel's blended flow.

    Returns an array of shape (3, k, 6): flow component, channel, then
    parameter (three Euler angles followed by three translation components).
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (transforms.k,):
        raise ChannelMismatch(f"mask vector of length {m.shape} for {transforms.k} transforms")
    x = np.asarray(x, dtype=float)
    J = np.zeros((3, transforms.k, 6))
    for i, T in enumerate(transforms.transforms):
        for a, dR in enumerate(euler_partials(T.euler)):
            J[:, i, a] = m[i] * (dR @ x)
        J[:, i, 3:] = m[i] * np.eye(3)
    return J


def motion_loss(pred: VectorVolume, gt: VectorVolume) -> float:
    """Mean squared flow error over voxels and components, in m^2."""
    check_same_grid(pred, gt)
    return float(np.mean((pred.values - gt.values) ** 2))
