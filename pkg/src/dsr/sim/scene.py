"""Tabletop scenes: random drops and ground-truth instance masks."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import PlacementFailure, TooManyObjects
from ..voxel import GridSpec, InstanceMaskVolume, one_hot
from .shapes import RigidObject, separation

WORKSPACE_HALF = 0.256
CUBE_SIZES = (0.02, 0.04)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; all randomness of an episode comes from one of these."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class SceneState:
    objects: tuple[RigidObject, ...] = ()
    half_extent: float = WORKSPACE_HALF

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(sorted(self.objects, key=lambda o: o.id)))

    @property
    def ids(self) -> list[int]:
        return [o.id for o in self.objects]

    def channel_of(self) -> dict[int, int]:
        """Stable object id -> mask channel map (ids in increasing order)."""
        return {o.id: c for c, o in enumerate(self.objects)}

    def get(self, obj_id: int) -> RigidObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    def with_objects(self, objects) -> "SceneState":
        return replace(self, objects=tuple(objects))

    def to_dict(self) -> dict:
        return {"half_extent": self.half_extent, "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d) -> "SceneState":
        return cls(tuple(RigidObject.from_dict(o) for o in d["objects"]), d["half_extent"])


def clamp_to_workspace(obj: RigidObject, half: float) -> RigidObject:
    lo, hi = obj.aabb()
    shift = np.zeros(2)
    for a in range(2):
        if lo[a] < -half:
            shift[a] = -half - lo[a]
        elif hi[a] > half:
            shift[a] = half - hi[a]
    if not shift.any():
        return obj
    return obj.moved(shift)


def sample_object(rng: np.random.Generator, obj_id: int, shape_set: str = "cubes") -> RigidObject:
    """Draw one primitive. ``cubes`` gives cubes with side in [0.02, 0.04] m."""
    yaw = float(rng.uniform(0, np.pi / 2))
    if shape_set == "cubes":
        s = float(rng.uniform(*CUBE_SIZES))
        return RigidObject.on_table(obj_id, "box", (s, s, s), 0.0, 0.0, yaw)
    if shape_set != "mixed":
        raise ValueError(f"unknown shape set {shape_set!r}")
    kind = ("box", "cylinder", "sphere")[int(rng.integers(3))]
    if kind == "box":
        size = tuple(float(v) for v in rng.uniform(0.02, 0.06, size=3))
    elif kind == "cylinder":
        size = (float(rng.uniform(0.012, 0.025)), float(rng.uniform(0.02, 0.06)))
    else:
        size = (float(rng.uniform(0.012, 0.022)),)
    return RigidObject.on_table(obj_id, kind, size, 0.0, 0.0, yaw)


def resolve_overlaps(objects: list[RigidObject], clearance: float, half: float, max_iter: int = 100) -> bool:
    """Push overlapping pairs apart symmetrically, in place. True when clear."""
    for _ in range(max_iter):
        moved = False
        for i in range(len(objects)):
            for j in range(i + 1, len(objects)):
                v = separation(objects[i].footprint(), objects[j].footprint(), clearance)
                if v is None:
                    continue
                moved = True
                objects[i] = clamp_to_workspace(objects[i].moved(-v / 2), half)
                objects[j] = clamp_to_workspace(objects[j].moved(v / 2), half)
        if not moved:
            return True
    return False


def drop_objects(
    rng_seed,
    n_objects: int,
    k: int = 5,
    shape_set: str = "cubes",
    drop_half: float = 0.15,
    clearance: float = 0.02,
    max_attempts: int = 1000,
) -> SceneState:
    """Randomly place ``n_objects`` primitives without interpenetration."""
    if not 1 <= n_objects <= k - 1:
        raise TooManyObjects(f"n_objects={n_objects} must be in [1, {k - 1}]")
    rng = make_rng(rng_seed)
    for _ in range(max_attempts):
        objects = []
        for i in range(n_objects):
            o = sample_object(rng, i, shape_set)
            x, y = rng.uniform(-drop_half, drop_half, size=2)
            objects.append(clamp_to_workspace(o.placed(float(x), float(y), o.yaw), WORKSPACE_HALF))
        if resolve_overlaps(objects, clearance, WORKSPACE_HALF):
            return SceneState(tuple(objects))
    raise PlacementFailure(f"could not place {n_objects} objects after {max_attempts} attempts")


def object_voxels(obj: RigidObject, spec: GridSpec) -> np.ndarray:
    """Flat indices of voxels whose centers lie inside ``obj``."""
    lo, hi = obj.aabb()
    org = np.asarray(spec.origin)
    i0 = np.maximum(np.floor((lo - org) / spec.voxel_size - 0.5).astype(int), 0)
    i1 = np.minimum(np.ceil((hi - org) / spec.voxel_size - 0.5).astype(int) + 1, spec.dims)
    if np.any(i1 <= i0):
        return np.zeros(0, dtype=np.int64)
    sub = spec.centers()[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]]
    inside = obj.contains(sub)
    local = np.stack(np.nonzero(inside), axis=1) + i0
    return np.ravel_multi_index(tuple(local.T), spec.dims)


def gt_labels(scene: SceneState, spec: GridSpec, k: int = 5) -> np.ndarray:
    """Per-voxel channel index of the ground-truth amodal masks."""
    if len(scene.objects) > k - 1:
        raise TooManyObjects(f"{len(scene.objects)} objects exceed {k - 1} channels")
    labels = np.full(spec.n_voxels, k - 1, dtype=np.int64)
    for c, obj in enumerate(scene.objects):
        labels[object_voxels(obj, spec)] = c
    return labels.reshape(spec.dims)


def gt_masks(scene: SceneState, spec: GridSpec, k: int = 5) -> InstanceMaskVolume:
    return InstanceMaskVolume(spec, one_hot(gt_labels(scene, spec, k), k))


def max_interpenetration(scene: SceneState) -> float:
    worst = 0.0
    objs = scene.objects
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            v = separation(objs[i].footprint(), objs[j].footprint())
            if v is not None:
                worst = max(worst, float(np.linalg.norm(v)))
    return worst
