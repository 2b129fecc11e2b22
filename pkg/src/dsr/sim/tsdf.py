"""Single-view TSDF encoding of a depth image."""

from __future__ import annotations

import numpy as np

from ..voxel import GridSpec, TsdfVolume
from .render import CameraModel

TRUNCATION = 0.02


def fuse_tsdf(depth: np.ndarray, cam: CameraModel, spec: GridSpec, truncation: float = TRUNCATION) -> TsdfVolume:
    """Project every voxel center into the depth image and store clamp(sd / tau, -1, 1).

    ``sd`` is observed depth minus voxel depth along the optical axis. Voxels
    that fall outside the image, behind the camera or on an empty pixel are
    flagged unobserved and hold -1.
    """
    pts = spec.centers().reshape(-1, 3)
    z, u, v = cam.project(pts)
    with np.errstate(invalid="ignore"):
        ui = np.rint(u)
        vi = np.rint(v)
        ok = (z > 0) & (ui >= 0) & (ui < cam.width) & (vi >= 0) & (vi < cam.height)
    ui = np.where(ok, ui, 0).astype(np.int64)
    vi = np.where(ok, vi, 0).astype(np.int64)
    d = depth[vi, ui]
    ok &= d > 0
    sd = d - z
    values = np.where(ok, np.clip(sd / truncation, -1.0, 1.0), -1.0)
    return TsdfVolume(spec, values.reshape(spec.dims), ok.reshape(spec.dims), truncation)
