"""Pinhole depth rendering of primitive scenes by analytic ray casting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import SceneState


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; ``pose`` is world-from-camera with x right, y down, z forward."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=float).reshape(4, 4))

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def eye(self) -> np.ndarray:
        return self.pose[:3, 3]

    def project(self, points: np.ndarray):
        """Camera-frame depth and pixel coordinates (u, v) of world points."""
        pc = (np.asarray(points, dtype=float) - self.eye) @ self.rotation
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return z, u, v

    def rays(self):
        """Per-pixel ray origins and directions scaled to unit camera depth."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u, dtype=float)], axis=-1)
        dirs = d.reshape(-1, 3) @ self.rotation.T
        return np.broadcast_to(self.eye, dirs.shape), dirs

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height, "pose": self.pose.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "CameraModel":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"], np.asarray(d["pose"]))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    pose = np.eye(4)
    pose[:3, :3] = np.stack([x, y, z], axis=1)
    pose[:3, 3] = eye
    return pose


def default_camera() -> CameraModel:
    """Oblique front view of the 0.512 m workspace."""
    w, h = 320, 240
    return CameraModel(280.0, 280.0, (w - 1) / 2, (h - 1) / 2, w, h, look_at((0.0, -0.55, 0.45), (0.0, 0.02, 0.0)))


def render_depth(scene: SceneState, cam: CameraModel) -> np.ndarray:
    """Depth along the optical axis per pixel; 0 where nothing is hit.

    Directions have unit camera-frame z, so the ray parameter is the depth.
    """
    o, d = cam.rays()
    best = np.full(len(d), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = -o[:, 2] / d[:, 2]
    best = np.where((d[:, 2] < 0) & (t_table > 0), t_table, best)
    for obj in scene.objects:
        best = np.minimum(best, obj.intersect(o, d))
    depth = np.where(np.isfinite(best), best, 0.0)
    return depth.reshape(cam.height, cam.width)
