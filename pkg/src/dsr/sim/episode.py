"""Benchmark episodes: drop objects, then render, fuse and push for a fixed number of steps."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import io
from ..rigid import SE3Transform, TransformSet, blended_flow
from ..voxel import GridSpec, InstanceMaskVolume, TsdfVolume, VectorVolume
from .policy import PolicyState, interaction_policy
from .push import PushAction, PushConfig, action_map, step_push
from .render import CameraModel, default_camera, render_depth
from .scene import SceneState, drop_objects, gt_labels, make_rng
from .tsdf import TRUNCATION, fuse_tsdf


@dataclass(frozen=True)
class EpisodeConfig:
    n_objects: int = 4
    n_steps: int = 10
    k: int = 5
    shape_set: str = "cubes"
    truncation: float = TRUNCATION
    compress: bool = True
    push: PushConfig = field(default_factory=PushConfig)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["push"] = dict(self.push.__dict__)
        return d

    @classmethod
    def from_dict(cls, d) -> "EpisodeConfig":
        d = dict(d)
        d["push"] = PushConfig(**d.get("push", {}))
        return cls(**d)


@dataclass
class Episode:
    """Observations 0..n and the n interactions between them.

    ``labels[t]`` is the ground-truth channel index volume of observation t
    (channel = rank of the object id). ``transforms[t]`` moves state t to
    state t+1, one transform per channel.
    """

    seed: int
    spec: GridSpec
    camera: CameraModel
    k: int
    scenes: list
    depths: list
    tsdfs: list
    labels: list
    actions: list = field(default_factory=list)
    transforms: list = field(default_factory=list)
    touched: list = field(default_factory=list)
    _flows: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_steps(self) -> int:
        return len(self.actions)

    def gt_masks(self, t: int) -> InstanceMaskVolume:
        return InstanceMaskVolume.from_labels(self.spec, self.labels[t], self.k)

    def gt_flow(self, t: int) -> VectorVolume:
        if t not in self._flows:
            self._flows[t] = blended_flow(self.gt_masks(t), self.transforms[t])
        return self._flows[t]

    def object_transforms(self, t: int) -> dict:
        return {o.id: self.transforms[t][c] for c, o in enumerate(self.scenes[t].objects)}

    # -- persistence -------------------------------------------------------

    def save(self, path, compress: bool = True) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        ext = ".vol.gz" if compress else ".vol"
        io.write_json(
            path / "meta.json",
            {
                "seed": self.seed,
                "grid": self.spec.to_dict(),
                "camera": self.camera.to_dict(),
                "k": self.k,
                "n_steps": self.n_steps,
                "volume_suffix": ext,
                "truncation": self.tsdfs[0].truncation,
                "scene": self.scenes[0].to_dict(),
            },
        )
        for t in range(self.n_steps + 1):
            io.write_depth(path / f"depth_{t:02d}.bin", self.depths[t])
            io.write_volume(path / f"tsdf_{t:02d}{ext}", self.tsdfs[t])
            io.write_labels(path / f"gt_masks_{t:02d}{ext}", self.spec, self.labels[t], self.k)
        for t in range(self.n_steps):
            a = self.actions[t]
            io.write_json(path / f"action_{t:02d}.json", a.to_dict())
            io.write_action_map(path / f"action_map_{t:02d}{ext}", action_map(a, self.spec), self.spec)
            io.write_json(
                path / f"gt_transforms_{t:02d}.json",
                {
                    "channels": self.transforms[t].to_list(),
                    "objects": {str(i): T.to_dict() for i, T in self.object_transforms(t).items()},
                    "touched": sorted(self.touched[t]),
                    "scene_after": self.scenes[t + 1].to_dict(),
                },
            )
            io.write_volume(path / f"gt_flow_{t:02d}{ext}", self.gt_flow(t))
        return path

    @classmethod
    def load(cls, path, with_depth: bool = True) -> "Episode":
        path = Path(path)
        meta = io.read_json(path / "meta.json")
        ext = meta["volume_suffix"]
        spec = GridSpec.from_dict(meta["grid"])
        n = meta["n_steps"]
        k = meta["k"]
        scenes = [SceneState.from_dict(meta["scene"])]
        actions, transforms, touched = [], [], []
        for t in range(n):
            actions.append(PushAction.from_dict(io.read_json(path / f"action_{t:02d}.json")))
            rec = io.read_json(path / f"gt_transforms_{t:02d}.json")
            transforms.append(TransformSet.from_list(rec["channels"]))
            touched.append(frozenset(rec["touched"]))
            scenes.append(SceneState.from_dict(rec["scene_after"]))
        depths = [io.read_depth(path / f"depth_{t:02d}.bin") if with_depth else None for t in range(n + 1)]
        tsdfs = []
        labels = []
        for t in range(n + 1):
            tsdf = io.read_volume(path / f"tsdf_{t:02d}{ext}")
            tsdfs.append(TsdfVolume(tsdf.spec, tsdf.values, tsdf.observed, meta["truncation"]))
            labels.append(io.read_volume(path / f"gt_masks_{t:02d}{ext}").labels().astype(np.uint8))
        return cls(meta["seed"], spec, CameraModel.from_dict(meta["camera"]), k, scenes, depths, tsdfs, labels, actions, transforms, touched)


def observe(scene: SceneState, cam: CameraModel, spec: GridSpec, k: int, truncation: float = TRUNCATION):
    depth = render_depth(scene, cam)
    tsdf = fuse_tsdf(depth, cam, spec, truncation)
    return depth, tsdf, gt_labels(scene, spec, k).astype(np.uint8)


def channel_transforms(scene: SceneState, moves: dict, k: int) -> TransformSet:
    return TransformSet.from_objects(k, {c: moves[o.id] for c, o in enumerate(scene.objects)})


def record_episode(
    seed: int,
    scene: SceneState,
    choose_action,
    n_steps: int,
    k: int = 5,
    spec: GridSpec = GridSpec(),
    cam: CameraModel | None = None,
    truncation: float = TRUNCATION,
    push_cfg: PushConfig = PushConfig(),
) -> Episode:
    """Run ``n_steps`` interactions where ``choose_action(t, scene)`` picks each push."""
    cam = cam or default_camera()
    ep = Episode(seed, spec, cam, k, [], [], [], [])
    for t in range(n_steps + 1):
        depth, tsdf, labels = observe(scene, cam, spec, k, truncation)
        ep.scenes.append(scene)
        ep.depths.append(depth)
        ep.tsdfs.append(tsdf)
        ep.labels.append(labels)
        if t == n_steps:
            break
        a = choose_action(t, scene)
        res = step_push(scene, a, spec, push_cfg)
        ep.actions.append(a)
        ep.transforms.append(channel_transforms(scene, res.transforms, k))
        ep.touched.append(res.touched)
        scene = res.scene
    return ep


def generate_episode(seed: int, cfg: EpisodeConfig = EpisodeConfig(), spec: GridSpec = GridSpec(), cam: CameraModel | None = None) -> Episode:
    """Random drop followed by policy-driven pushes; fully determined by ``seed``."""
    rng = make_rng(seed)
    scene = drop_objects(rng, cfg.n_objects, cfg.k, cfg.shape_set)
    pstate = PolicyState()

    def choose(t, s):
        return interaction_policy(s, pstate, rng, spec, cfg.push)

    return record_episode(seed, scene, choose, cfg.n_steps, cfg.k, spec, cam, cfg.truncation, cfg.push)


def write_manifest(out_dir, entries: list, config: dict) -> dict:
    record = {"config": config, "config_hash": io.config_hash(config), "episodes": entries}
    io.write_json(Path(out_dir) / "manifest.json", record)
    return record


def object_geometry_error(ep: Episode, t: int) -> float:
    """Largest gap between transformed step-t body points and step-t+1 body points, meters."""
    moves = ep.object_transforms(t)
    worst = 0.0
    for obj in ep.scenes[t].objects:
        after = ep.scenes[t + 1].get(obj.id)
        pred = moves[obj.id].apply(obj.body_points())
        worst = max(worst, float(np.abs(pred - after.body_points()).max()))
    return worst


__all__ = [
    "Episode",
    "EpisodeConfig",
    "SE3Transform",
    "channel_transforms",
    "generate_episode",
    "object_geometry_error",
    "observe",
    "record_episode",
    "write_manifest",
]
