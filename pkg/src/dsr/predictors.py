"""Motion predictors: what each mask channel does under a push.

Both return the sharpened current state as the predicted masks, plus one
rigid transform per channel with an identity background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rigid import SE3Transform, TransformSet
from .sim.push import PushAction, PushConfig, direction_vector, push_segment, step_push
from .sim.scene import SceneState, object_voxels
from .voxel import GridSpec, InstanceMaskVolume
from .warp import DsrState, sharpen


class MotionPredictor:
    """(state, action) -> (predicted masks, per-channel transforms)."""

    def predict(self, state: DsrState, action: PushAction) -> tuple[InstanceMaskVolume, TransformSet]:
        pred = sharpen(state.masks)
        return pred, self.transforms_for(pred.labels(), pred.k, action)

    def transforms_for(self, labels: np.ndarray, k: int, action: PushAction) -> TransformSet:
        """Per-channel motion of a hardened state under ``action``."""
        raise NotImplementedError

    def advance(self, action: PushAction) -> "MotionPredictor":
        """Predictor for the imagined world after ``action`` (used in multi-step rollouts)."""
        return self


def channel_footprints(labels: np.ndarray, k: int) -> dict[int, np.ndarray]:
    """Horizontal (x, y) cell indices covered by each object channel."""
    out = {}
    cols = labels.reshape(labels.shape[0] * labels.shape[1], -1)
    for c in range(k - 1):
        hit = np.flatnonzero((cols == c).any(axis=1))
        if len(hit):
            out[c] = np.stack(np.unravel_index(hit, labels.shape[:2]), axis=1)
    return out


@dataclass
class KinematicPredictor(MotionPredictor):
    """Analytic stand-in for a learned motion model.

    A channel whose footprint the pusher sweeps through translates along the
    push by the distance the pusher front travels past the footprint's near
    edge. Channels directly in front of a pushed channel are carried one level
    further in the same way. No rotation is predicted.
    """

    spec: GridSpec = field(default_factory=GridSpec)
    push: PushConfig = field(default_factory=PushConfig)

    def transforms_for(self, labels, k, action):
        moves = self.channel_moves(labels, k, action)
        return TransformSet.from_objects(k, {c: SE3Transform(translation=(v[0], v[1], 0.0)) for c, v in moves.items()})

    def channel_moves(self, labels: np.ndarray, k: int, action: PushAction) -> dict[int, np.ndarray]:
        spec = self.spec
        vs = spec.voxel_size
        start, _ = push_segment(action, spec, self.push)
        d = direction_vector(action.d)
        perp = np.array([-d[1], d[0]])
        L, r = self.push.stroke, self.push.pusher_radius
        org = np.asarray(spec.origin[:2])
        along, lateral = {}, {}
        for c, cells in channel_footprints(labels, k).items():
            xy = org + (cells + 0.5) * vs
            along[c] = (xy - start) @ d
            lateral[c] = (xy - start) @ perp

        def sweep(lo, hi, front, exclude):
            # channels hit by a body spanning [lo, hi] laterally whose leading edge reaches ``front``
            hits = {}
            for c in along:
                if c in exclude:
                    continue
                sel = (lateral[c] >= lo - vs / 2) & (lateral[c] <= hi + vs / 2) & (along[c] >= -r)
                if not sel.any():
                    continue
                near = along[c][sel].min() - vs / 2
                shift = float(np.clip(front - near, 0.0, L))
                if shift > 0:
                    hits[c] = shift
            return hits

        moves = sweep(-r, r, L + r, set())
        carried = {}
        for c, shift in moves.items():
            front = along[c].max() + vs / 2 + shift
            for c2, s2 in sweep(lateral[c].min(), lateral[c].max(), front, set(moves)).items():
                carried[c2] = max(carried.get(c2, 0.0), s2)
        moves.update(carried)
        return {c: d * s for c, s in moves.items()}


@dataclass
class OraclePredictor(MotionPredictor):
    """Queries the simulator on the true scene; the performance ceiling."""

    scene: SceneState
    spec: GridSpec = field(default_factory=GridSpec)
    push: PushConfig = field(default_factory=PushConfig)
    _last: tuple | None = field(default=None, repr=False, compare=False)

    def channel_objects(self, labels: np.ndarray, k: int) -> dict[int, int]:
        """State channel -> object id by maximal voxel overlap."""
        s = np.asarray(labels).ravel()
        n = k - 1
        ids = self.scene.ids
        conf = np.zeros((n, len(ids)), dtype=np.int64)
        for j, obj in enumerate(self.scene.objects):
            conf[:, j] = np.bincount(s[object_voxels(obj, self.spec)], minlength=k)[:n]
        out = {}
        for c in range(n):
            if conf[c].sum() > 0:
                out[c] = ids[int(np.argmax(conf[c]))]
        return out

    def _push(self, action: PushAction):
        if self._last is None or self._last[0] != action:
            self._last = (action, step_push(self.scene, action, self.spec, self.push))
        return self._last[1]

    def transforms_for(self, labels, k, action):
        res = self._push(action)
        moves = {}
        for c, obj_id in self.channel_objects(labels, k).items():
            T = res.transforms[obj_id]
            if not T.is_identity:
                moves[c] = T
        return TransformSet.from_objects(k, moves)

    def advance(self, action: PushAction) -> "OraclePredictor":
        return OraclePredictor(self._push(action).scene, self.spec, self.push)


def make_predictor(name: str, spec: GridSpec, scene: SceneState | None = None, push: PushConfig = PushConfig()) -> MotionPredictor:
    if name == "kinematic":
        return KinematicPredictor(spec, push)
    if name == "oracle":
        if scene is None:
            raise ValueError("the oracle predictor needs the true scene")
        return OraclePredictor(scene, spec, push)
    raise ValueError(f"unknown predictor {name!r}")
