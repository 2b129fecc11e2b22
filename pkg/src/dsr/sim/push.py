"""Quasi-static planar pushing with a vertical cylindrical pusher."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ActionOutOfGrid
from ..rigid import SE3Transform, euler_to_matrix
from ..voxel import GridSpec
from .scene import SceneState, clamp_to_workspace
from .shapes import Circle, separation

N_DIRECTIONS = 8


@dataclass(frozen=True)
class PushAction:
    """Start cell (px, py) on the horizontal voxel grid and direction index d (d * 45 deg)."""

    px: int
    py: int
    d: int

    def __post_init__(self):
        for name in ("px", "py", "d"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if not 0 <= self.d < N_DIRECTIONS:
            raise ActionOutOfGrid(f"direction {self.d} not in [0, {N_DIRECTIONS})")

    def to_dict(self) -> dict:
        return {"px": self.px, "py": self.py, "d": self.d}

    @classmethod
    def from_dict(cls, d) -> "PushAction":
        return cls(d["px"], d["py"], d["d"])


@dataclass(frozen=True)
class PushConfig:
    stroke: float = 0.12
    pusher_radius: float = 0.01
    substeps: int = 120
    yaw_cap: float = 0.3
    settle_passes: int = 20


@dataclass
class PushResult:
    scene: SceneState
    transforms: dict  # object id -> net world-frame SE3Transform
    touched: frozenset = field(default_factory=frozenset)


_H = np.sqrt(0.5)
# exact axis components, so a sideways direction has zero dot product
_DIRECTIONS = np.array([[1, 0], [_H, _H], [0, 1], [-_H, _H], [-1, 0], [-_H, -_H], [0, -1], [_H, -_H]])


def direction_vector(d: int) -> np.ndarray:
    """Unit vector of direction index d, d * 45 degrees counter-clockwise from +x."""
    return _DIRECTIONS[d].copy()


def cell_center(spec: GridSpec, px: int, py: int) -> np.ndarray:
    return np.array([spec.origin[0] + (px + 0.5) * spec.voxel_size, spec.origin[1] + (py + 0.5) * spec.voxel_size])


def world_to_cell(spec: GridSpec, xy) -> tuple[int, int]:
    nx, ny, _ = spec.dims
    px = int(np.clip(np.floor((xy[0] - spec.origin[0]) / spec.voxel_size), 0, nx - 1))
    py = int(np.clip(np.floor((xy[1] - spec.origin[1]) / spec.voxel_size), 0, ny - 1))
    return px, py


def check_action(a: PushAction, spec: GridSpec):
    nx, ny, _ = spec.dims
    if not (0 <= a.px < nx and 0 <= a.py < ny):
        raise ActionOutOfGrid(f"push start ({a.px}, {a.py}) outside the {nx}x{ny} grid")


def push_segment(a: PushAction, spec: GridSpec, cfg: PushConfig = PushConfig()):
    start = cell_center(spec, a.px, a.py)
    return start, start + direction_vector(a.d) * cfg.stroke


def action_map(a: PushAction, spec: GridSpec) -> np.ndarray:
    """One-hot 8 x nx x ny encoding with a 1 at [d, px, py]."""
    check_action(a, spec)
    nx, ny, _ = spec.dims
    m = np.zeros((N_DIRECTIONS, nx, ny))
    m[a.d, a.px, a.py] = 1.0
    return m


def _contact(a, b):
    """Separation vector moving ``b`` off ``a``, with a bounding-circle early out."""
    gap = np.hypot(*(a.center[:2] - b.center[:2])) - a.footprint_radius - b.footprint_radius
    if gap >= 0:
        return None
    return separation(a.footprint(), b.footprint())


def _settle(objs: list, driver: int, half: float, passes: int, touched: set):
    """Separate objects overlapping the driven one, recursively, then clamp to the workspace."""
    for _ in range(passes):
        queue = [driver]
        budget = 8 * len(objs)
        while queue and budget:
            budget -= 1
            a = queue.pop(0)
            for b in range(len(objs)):
                if b == a:
                    continue
                v = _contact(objs[a], objs[b])
                if v is None:
                    continue
                objs[b] = clamp_to_workspace(objs[b].moved(v), half)
                touched.add(b)
                queue.append(b)
        # a clamped object may now overlap a neighbour; settle again from each
        clean = True
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                if _contact(objs[i], objs[j]) is not None:
                    clean = False
                    driver = i
        if clean:
            return


def net_transform(before, after) -> SE3Transform:
    """World-frame transform taking ``before``'s pose to ``after``'s."""
    dyaw = after.yaw - before.yaw
    R = euler_to_matrix((0.0, 0.0, dyaw))
    t = after.center - R @ before.center
    return SE3Transform((0.0, 0.0, dyaw), tuple(t))


def step_push(scene: SceneState, a: PushAction, spec: GridSpec = GridSpec(), cfg: PushConfig = PushConfig()) -> PushResult:
    """Sweep the pusher along the action and return the settled scene and per-object motion.

    At every substep each object penetrated by the pusher is translated by the
    minimal separation vector and yawed by lever arm x penetration / footprint
    radius, with the accumulated yaw per push capped at ``yaw_cap``.
    """
    check_action(a, spec)
    start = cell_center(spec, a.px, a.py)
    d = direction_vector(a.d)
    objs = list(scene.objects)
    yaw_acc = np.zeros(len(objs))
    touched: set[int] = set()
    step_len = cfg.stroke / cfg.substeps
    # bounding circles, refreshed whenever something moves
    centers = np.array([o.center[:2] for o in objs]).reshape(-1, 2)
    reach = np.array([o.footprint_radius for o in objs]) + cfg.pusher_radius
    for s in range(1, cfg.substeps + 1):
        pc = start + d * (step_len * s)
        near = np.flatnonzero(np.hypot(*(centers - pc).T) < reach)
        for i in near:
            o = objs[i]
            v = separation(Circle(pc, cfg.pusher_radius), o.footprint())
            if v is None:
                continue
            pen = float(np.linalg.norm(v))
            n = v / pen
            r = pc + n * cfg.pusher_radius - o.center[:2]
            lever = r[0] * n[1] - r[1] * n[0]
            dyaw = lever * pen / o.footprint_radius
            acc = float(np.clip(yaw_acc[i] + dyaw, -cfg.yaw_cap, cfg.yaw_cap))
            dyaw, yaw_acc[i] = acc - yaw_acc[i], acc
            objs[i] = clamp_to_workspace(o.moved(v, dyaw), scene.half_extent)
            touched.add(i)
            _settle(objs, i, scene.half_extent, cfg.settle_passes, touched)
            centers = np.array([o.center[:2] for o in objs])
    transforms = {}
    for i, (before, after) in enumerate(zip(scene.objects, objs)):
        if i in touched:
            transforms[before.id] = net_transform(before, after)
        else:
            objs[i] = before
            transforms[before.id] = SE3Transform.identity()
    ids = frozenset(scene.objects[i].id for i in touched)
    return PushResult(scene.with_objects(objs), transforms, ids)
