"""Heuristic interaction policy that keeps reordering objects inside the workspace."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..voxel import GridSpec
from .push import N_DIRECTIONS, PushAction, PushConfig, direction_vector, world_to_cell
from .scene import SceneState

FAR_DISTANCE = 0.2
FAR_PENALTY = -10.0
CLEARANCE_VOXELS = 2


@dataclass
class PolicyState:
    scores: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    last: dict = field(default_factory=dict)


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x.max())
    return e / e.sum()


def bump_score(score: int) -> int:
    score += 1
    return -2 if score > 2 else score


def _unit(v) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else np.zeros_like(v)


def direction_scores(p0, p_last, p_now) -> np.ndarray:
    """Q(v) = 1.5 v.unit(p_now - p0) + 2 v.unit(p_now - p_last), plus the far-from-center penalty."""
    p0, p_last, p_now = (np.asarray(p, dtype=float) for p in (p0, p_last, p_now))
    away = _unit(p_now - p0)
    onward = _unit(p_now - p_last)
    q = np.zeros(N_DIRECTIONS)
    for d in range(N_DIRECTIONS):
        v = direction_vector(d)
        q[d] = 1.5 * (v @ away) + 2.0 * (v @ onward)
        if np.linalg.norm(p_now) >= FAR_DISTANCE and v @ p_now > 0:
            q[d] += FAR_PENALTY
    return q


def interaction_policy(
    scene: SceneState,
    pstate: PolicyState,
    rng: np.random.Generator,
    spec: GridSpec = GridSpec(),
    push_cfg: PushConfig = PushConfig(),
) -> PushAction:
    """Choose an object by softmax of scores, then a direction by softmax of Q.

    ``pstate`` is updated in place. The pusher starts behind the chosen
    object, two voxels clear of its footprint.
    """
    if not scene.objects:
        raise ValueError("the policy needs at least one object")
    now = {o.id: o.center[:2].copy() for o in scene.objects}
    for i, p in now.items():
        pstate.scores.setdefault(i, 0)
        pstate.initial.setdefault(i, p)
        pstate.last.setdefault(i, p)
    ids = scene.ids
    probs = softmax([pstate.scores[i] for i in ids])
    chosen = ids[int(rng.choice(len(ids), p=probs))]
    pstate.scores[chosen] = bump_score(pstate.scores[chosen])

    q = direction_scores(pstate.initial[chosen], pstate.last[chosen], now[chosen])
    d = int(rng.choice(N_DIRECTIONS, p=softmax(q)))
    pstate.last.update(now)

    return push_behind(scene.get(chosen), d, spec, push_cfg)


def push_behind(obj, d: int, spec: GridSpec = GridSpec(), push_cfg: PushConfig = PushConfig()) -> PushAction:
    """Action that starts just behind ``obj`` and pushes it along direction ``d``."""
    v = direction_vector(d)
    c = obj.center[:2]
    reach = obj.footprint().support(v) - v @ c
    start = c - v * (reach + push_cfg.pusher_radius + CLEARANCE_VOXELS * spec.voxel_size)
    px, py = world_to_cell(spec, start)
    return PushAction(px, py, d)
