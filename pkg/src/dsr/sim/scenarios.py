"""Scripted episode suites for occlusion and identity-swap behaviour.

Each builder jitters sizes and positions from the seed and returns an
Episode together with the id of the object the suite is about.
"""

from __future__ import annotations

import numpy as np

from ..voxel import GridSpec
from .episode import Episode, record_episode
from .policy import push_behind
from .push import PushAction, PushConfig
from .scene import SceneState, make_rng
from .shapes import RigidObject

EAST, NORTH, WEST, SOUTH = 0, 2, 4, 6
# a push far from every scripted object; leaves the scene untouched
IDLE = PushAction(2, 125, EAST)


def _cube(rng, obj_id, x, y, size=None, yaw=0.02):
    s = size if size is not None else float(rng.uniform(0.026, 0.034))
    return RigidObject.on_table(obj_id, "box", (s, s, s), x, y, float(rng.uniform(-yaw, yaw)))


def _script(scene, plan, spec, push_cfg):
    """plan: list of (object id, direction) or None for an idle step."""

    def choose(t, s):
        if plan[t] is None:
            return IDLE
        obj_id, d = plan[t]
        return push_behind(s.get(obj_id), d, spec, push_cfg)

    return choose


def static_occlusion(seed: int, spec: GridSpec = GridSpec(), push_cfg: PushConfig = PushConfig()) -> tuple[Episode, int]:
    """A tall wall is pushed sideways in front of a cube, hiding it from the camera."""
    rng = make_rng(seed)
    j = rng.uniform(-0.01, 0.01, size=3)
    cube = _cube(rng, 0, j[0], 0.06 + j[1])
    wall = RigidObject.on_table(1, "box", (0.10, 0.03, 0.10), -0.115 + j[2], -0.01, 0.0)
    scene = SceneState((cube, wall))
    plan = [(1, EAST), None, None]
    return record_episode(seed, scene, _script(scene, plan, spec, push_cfg), len(plan), spec=spec, push_cfg=push_cfg), 0


def dynamic_occlusion(seed: int, spec: GridSpec = GridSpec(), push_cfg: PushConfig = PushConfig()) -> tuple[Episode, int]:
    """A visible cube is pushed behind a static wall and stays there."""
    rng = make_rng(seed)
    j = rng.uniform(-0.008, 0.008, size=3)
    cube = _cube(rng, 0, -0.12 + j[0], 0.06 + j[1])
    wall = RigidObject.on_table(1, "box", (0.10, 0.03, 0.10), j[2], -0.01, 0.0)
    scene = SceneState((cube, wall))
    plan = [(0, EAST), None, None]
    return record_episode(seed, scene, _script(scene, plan, spec, push_cfg), len(plan), spec=spec, push_cfg=push_cfg), 0


def swap(seed: int, spec: GridSpec = GridSpec(), push_cfg: PushConfig = PushConfig()) -> tuple[Episode, int]:
    """Two identical cubes trade their left/right order halfway through the episode.

    Sideways moves alternate with pushes along y so the cubes never collide.
    """
    rng = make_rng(seed)
    s = float(rng.uniform(0.028, 0.034))
    j = rng.uniform(-0.01, 0.01, size=4)
    a = _cube(rng, 0, -0.06 + j[0], j[1], s)
    b = _cube(rng, 1, 0.06 + j[2], j[3], s)
    scene = SceneState((a, b))
    plan = [(0, NORTH), (1, SOUTH), (0, EAST), (1, WEST), (0, SOUTH), (1, NORTH)]
    return record_episode(seed, scene, _script(scene, plan, spec, push_cfg), len(plan), spec=spec, push_cfg=push_cfg), 0


SUITES = {"static_occlusion": static_occlusion, "dynamic_occlusion": dynamic_occlusion, "swap": swap}


def object_iou(gt_labels: np.ndarray, state_labels: np.ndarray, channel: int, k: int) -> float:
    """Best IoU of gt channel ``channel`` against any state object channel."""
    g = gt_labels.ravel() == channel
    best = 0.0
    s = state_labels.ravel()
    for c in range(k - 1):
        p = s == c
        union = np.count_nonzero(g | p)
        if union:
            best = max(best, np.count_nonzero(g & p) / union)
    return best
