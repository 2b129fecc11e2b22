"""Flow error and instance IoU metrics."""

from __future__ import annotations

import numpy as np

from .errors import ChannelMismatch, EmptyRegion
from .matching import ChannelPermutation, object_permutations
from .voxel import InstanceMaskVolume, TsdfVolume, VectorVolume, check_same_grid, check_same_k

CM = 100.0


def flow_error(pred: VectorVolume, gt: VectorVolume, region: str = "full", visible_mask=None) -> tuple[float, float]:
    """(mean endpoint error in cm, mean squared endpoint error in cm^2) over the region."""
    check_same_grid(pred, gt)
    diff = (pred.values - gt.values).reshape(-1, 3)
    if region == "full":
        sel = np.ones(len(diff), dtype=bool)
    elif region == "visible":
        if visible_mask is None:
            raise ValueError("the visible region needs a visible_mask")
        sel = np.asarray(visible_mask, dtype=bool).ravel()
    else:
        raise ValueError(f"unknown region {region!r}")
    if not sel.any():
        raise EmptyRegion(f"no voxels selected for the {region} region")
    sq = np.einsum("ij,ij->i", diff[sel], diff[sel]) * CM**2
    return float(np.mean(np.sqrt(sq))), float(np.mean(sq))


def visible_surface(tsdf: TsdfVolume, gt: InstanceMaskVolume | None = None) -> np.ndarray:
    """Observed voxels within the truncation band, optionally restricted to gt objects."""
    vis = tsdf.observed & (np.abs(tsdf.values) < 1)
    if gt is not None:
        vis &= gt.labels() != gt.k - 1
    return vis


def iou_matrix(gt_labels: np.ndarray, pred_labels: np.ndarray, k: int) -> np.ndarray:
    """(k-1) x (k-1) IoU between gt object channel i and predicted channel j.

    Empty gt channels score 1 against an empty prediction and 0 otherwise.
    """
    n = k - 1
    g = np.asarray(gt_labels).ravel()
    p = np.asarray(pred_labels).ravel()
    # background-background voxels never enter an object IoU
    sel = np.flatnonzero((g != n) | (p != n))
    g = g[sel].astype(np.int64)
    p = p[sel].astype(np.int64)
    conf = np.bincount(g * k + p, minlength=k * k).reshape(k, k)[:n, :n].astype(float)
    gsize = np.bincount(g, minlength=k)[:n].astype(float)
    psize = np.bincount(p, minlength=k)[:n].astype(float)
    union = gsize[:, None] + psize[None, :] - conf
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, conf / union, 1.0)
    return iou


def _labels(masks) -> np.ndarray:
    return masks.labels() if isinstance(masks, InstanceMaskVolume) else np.asarray(masks)


def _check(gt: InstanceMaskVolume, pred: InstanceMaskVolume):
    check_same_grid(gt, pred)
    check_same_k(gt, pred)


def _perm_scores(mats: list[np.ndarray]) -> np.ndarray:
    n = mats[0].shape[0]
    perms = object_permutations(n + 1)
    total = np.zeros(len(perms))
    for m in mats:
        for i in range(n):
            total = total + m[i, perms[:, i]]
    return total / n


def unordered_iou(gt: InstanceMaskVolume, pred: InstanceMaskVolume) -> tuple[float, ChannelPermutation]:
    """Best mean per-object-channel IoU over channel permutations, with that permutation."""
    _check(gt, pred)
    m = iou_matrix(gt.labels(), pred.labels(), gt.k)
    scores = _perm_scores([m])
    best = int(np.argmax(scores))
    return float(scores[best]), ChannelPermutation.from_objects(object_permutations(gt.k)[best])


def ordered_iou(pairs) -> tuple[float, ChannelPermutation]:
    """Mean IoU over a sequence under the single permutation that is best for the whole sequence."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("ordered_iou needs at least one step")
    k = pairs[0][0].k
    mats = []
    for gt, pred in pairs:
        _check(gt, pred)
        if gt.k != k:
            raise ChannelMismatch("channel count changes within the sequence")
        mats.append(iou_matrix(gt.labels(), pred.labels(), k))
    return sequence_scores(mats)


def sequence_scores(mats: list[np.ndarray]) -> tuple[float, ChannelPermutation]:
    """Ordered IoU from precomputed per-step IoU matrices."""
    n = mats[0].shape[0]
    scores = _perm_scores(mats) / len(mats)
    best = int(np.argmax(scores))
    return float(scores[best]), ChannelPermutation.from_objects(object_permutations(n + 1)[best])


def step_unordered(mat: np.ndarray) -> float:
    return float(_perm_scores([mat]).max())
