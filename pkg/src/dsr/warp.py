"""Forward warping and history aggregation of the amodal scene state.

The persistent state is the k-channel instance probability volume itself.
Each interaction step warps it with the predicted scene flow, then fuses a
fresh TSDF observation: observed free space becomes background, observed
surfaces (plus their occluded columns) take the label of the matching
channel, and everything still unknown keeps the warped history.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io
from .errors import ChannelMismatch, NonFiniteFlow, TooManyObjects
from .matching import optimal_matching
from .rigid import TransformSet, blended_flow, blended_points
from .voxel import GridSpec, InstanceMaskVolume, TsdfVolume, VectorVolume, check_same_grid, check_same_k

ZERO_WEIGHT = 1e-12
SNAP = 1e-9
_OFFSETS = np.array(list(itertools.product((0, 1), repeat=3)))


class AggregationMode(str, enum.Enum):
    DSR = "dsr"
    NOWARP = "nowarp"
    SINGLESTEP = "singlestep"
    GTWARP = "gtwarp"

    @property
    def warps(self) -> bool:
        return self in (AggregationMode.DSR, AggregationMode.GTWARP)


@dataclass(frozen=True)
class PerceptionConfig:
    # Voxels up to this far behind the observed surface (meters, along the
    # camera axis) count as occupied; deeper ones are occluded/unknown.
    occupied_band: float = 0.008
    min_segment_voxels: int = 20
    # Fragments of one object split by partial occlusion are grouped when at
    # most 2 * bridge voxels apart.
    bridge: int = 1


@dataclass(frozen=True)
class AggregateConfig:
    k: int = 5
    eta: float = 0.05
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    # Split an observed segment that covers several live history channels.
    split_merged: bool = True
    split_min_fraction: float = 0.2
    # "raise" (TooManyObjects) or "drop_smallest" when segments exceed k - 1.
    overflow: str = "raise"
    # Integrated probability (in voxels) below which a channel counts as empty.
    empty_mass: float = 0.5
    # A channel that gets no observed segment but loses more than this fraction
    # of its mass to observed free space or other objects is cleared: what is
    # left is a stale remainder, not an occluded object. None disables.
    vanish_fraction: float | None = 0.5


@dataclass
class DsrState:
    masks: InstanceMaskVolume
    step: int = 0
    identities: tuple = ()
    next_identity: int = 0

    def __post_init__(self):
        if not self.identities:
            self.identities = (None,) * (self.masks.k - 1)
        if len(self.identities) != self.masks.k - 1:
            raise ChannelMismatch("one identity slot per object channel is required")
        self.identities = tuple(self.identities)

    @classmethod
    def empty(cls, spec: GridSpec, k: int = 5) -> "DsrState":
        return cls(InstanceMaskVolume.background_only(spec, k))

    def live_channels(self, empty_mass: float = 0.5) -> list[int]:
        mass = self.masks.probs[:-1].reshape(self.masks.k - 1, -1).sum(axis=1)
        return [c for c in range(self.masks.k - 1) if mass[c] > empty_mass]

    def save(self, stem):
        """Write ``<stem>.vol.gz`` and the ``<stem>.json`` sidecar."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        io.write_volume(stem.with_name(stem.name + ".vol.gz"), self.masks)
        io.write_json(
            stem.with_name(stem.name + ".json"),
            {"step": self.step, "identities": list(self.identities), "next_identity": self.next_identity},
        )

    @classmethod
    def load(cls, stem) -> "DsrState":
        stem = Path(stem)
        masks = io.read_volume(stem.with_name(stem.name + ".vol.gz"))
        side = io.read_json(stem.with_name(stem.name + ".json"))
        return cls(masks, side["step"], tuple(side["identities"]), side["next_identity"])


# ---------------------------------------------------------------------------
# forward warping


def splat(spec: GridSpec, flow_vox: np.ndarray, weight: np.ndarray, src: np.ndarray):
    """Trilinear splat targets of the source voxels ``src`` (flat indices).

    ``flow_vox`` is the (N, 3) displacement of each source in voxel units and
    ``weight`` its scalar weight. Returns flat (source_row, target, weight)
    arrays with in-grid, nonzero contributions only, ordered by corner then
    source.
    """
    idx = np.stack(np.unravel_index(src, spec.dims), axis=1)
    pos = idx + flow_vox
    rounded = np.round(pos)
    pos = np.where(np.abs(pos - rounded) < SNAP, rounded, pos)
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    dims = np.asarray(spec.dims)
    rows, tgts, ws = [], [], []
    for o in _OFFSETS:
        w = weight * np.prod(np.where(o == 1, frac, 1.0 - frac), axis=1)
        t = base + o
        ok = (w > 0) & np.all((t >= 0) & (t < dims), axis=1)
        r = np.flatnonzero(ok)
        rows.append(r)
        tgts.append(np.ravel_multi_index(tuple(t[r].T), spec.dims))
        ws.append(w[r])
    return np.concatenate(rows), np.concatenate(tgts), np.concatenate(ws)


def warp_sparse(spec: GridSpec, src: np.ndarray, values: np.ndarray, flow_vox: np.ndarray, weight: np.ndarray, with_weight: bool = False):
    """Forward warp restricted to the given sources.

    ``values`` is (k, N) for the N source voxels ``src``. Returns the sorted
    flat indices of targets that received weight above the zero threshold and
    their normalised (k, M) values, plus the accumulated weights when
    ``with_weight``. Accumulation runs in a fixed source order.
    """
    rows, tgt, w = splat(spec, flow_vox, weight, src)
    targets, inv = np.unique(tgt, return_inverse=True)
    den = np.bincount(inv, weights=w, minlength=len(targets))
    hit = den > ZERO_WEIGHT
    # Normalise each contribution first: a target fed by one source then
    # copies that source's value bit for bit.
    wn = w / np.where(hit, den, 1.0)[inv]
    k = values.shape[0]
    out = np.empty((k, int(hit.sum())))
    for c in range(k):
        out[c] = np.bincount(inv, weights=wn * values[c, rows], minlength=len(targets))[hit]
    if with_weight:
        return targets[hit], out, den[hit]
    return targets[hit], out


def forward_warp(S: InstanceMaskVolume, F: VectorVolume, M: InstanceMaskVolume) -> InstanceMaskVolume:
    """Scatter ``S`` along flow ``F`` with weights from object probability in ``M``.

    Every voxel's contribution is weighted by its object mass under ``M`` and
    the trilinear kernel of its displaced position; targets normalise by
    their accumulated weight and targets receiving none become background.
    """
    check_same_grid(S, F, M)
    check_same_k(S, M)
    if not np.all(np.isfinite(F.values)):
        raise NonFiniteFlow("scene flow contains non-finite values")
    spec = S.spec
    k = S.k
    m = M.object_mass().ravel()
    src = np.flatnonzero(m > 0)
    flow_vox = F.values.reshape(-1, 3)[src] / spec.voxel_size
    targets, vals = warp_sparse(spec, src, S.probs.reshape(k, -1)[:, src], flow_vox, m[src])
    out = np.zeros((k, spec.n_voxels))
    out[k - 1] = 1.0
    out[:, targets] = vals
    return InstanceMaskVolume(spec, out.reshape(k, *spec.dims))


def warp_labels(spec: GridSpec, labels: np.ndarray, k: int, transforms: TransformSet, min_cover: float = 0.0) -> np.ndarray:
    """Hardened imagined next state of a hardened state.

    Equal to ``predict_next`` on one-hot masks followed by argmax, but only
    touches object voxels, which keeps planning rollouts cheap. With
    ``min_cover`` > 0 a target stays background unless it collects at least
    that much source weight (in voxels); 0.5 keeps a moved mask's volume
    instead of growing it by every cell the splat touches.
    """
    if all(T.is_identity for T in transforms.transforms):
        return np.asarray(labels)
    flat = np.asarray(labels).ravel()
    src = np.flatnonzero(flat != k - 1)
    out = np.full(spec.n_voxels, k - 1, dtype=np.int64)
    if len(src) == 0:
        return out.reshape(spec.dims)
    onehot = np.zeros((k, len(src)))
    onehot[flat[src], np.arange(len(src))] = 1.0
    pts = spec.centers().reshape(-1, 3)[src]
    flow = blended_points(onehot, transforms, pts) / spec.voxel_size
    targets, vals, cover = warp_sparse(spec, src, onehot, flow, np.ones(len(src)), with_weight=True)
    keep = cover >= min_cover
    out[targets[keep]] = np.argmax(vals[:, keep], axis=0)
    return out.reshape(spec.dims)


def sharpen(masks: InstanceMaskVolume) -> InstanceMaskVolume:
    """One-hot argmax of a mask volume."""
    return InstanceMaskVolume.from_labels(masks.spec, masks.labels(), masks.k)


def predict_next(masks: InstanceMaskVolume, predicted_masks: InstanceMaskVolume, transforms: TransformSet) -> InstanceMaskVolume:
    """Imagined next state: warp without a new observation (used for planning rollouts).

    Only voxels with object mass move, so the flow is evaluated there alone.
    """
    check_same_grid(masks, predicted_masks)
    spec = masks.spec
    k = masks.k
    m = predicted_masks.object_mass().ravel()
    src = np.flatnonzero(m > 0)
    pts = spec.centers().reshape(-1, 3)[src]
    flow = blended_points(predicted_masks.probs.reshape(k, -1)[:, src], transforms, pts)
    sparse = np.zeros((spec.n_voxels, 3))
    sparse[src] = flow
    return forward_warp(masks, VectorVolume(spec, sparse.reshape(*spec.dims, 3)), predicted_masks)


# ---------------------------------------------------------------------------
# perception stand-in


@dataclass
class Segments:
    labels: np.ndarray  # 0 = no segment, 1..n
    n: int
    occupied: np.ndarray
    free: np.ndarray
    unknown: np.ndarray

    def voxels(self, j: int) -> np.ndarray:
        """Flat indices of segment ``j`` (0-based)."""
        return np.flatnonzero(self.labels.ravel() == j + 1)


def classify(obs: TsdfVolume, cfg: PerceptionConfig = PerceptionConfig()):
    """Split voxels into occupied / free / unknown evidence."""
    band = cfg.occupied_band / obs.truncation
    v = obs.values
    free = obs.observed & (v > 0)
    occupied = obs.observed & (v <= 0) & (v >= -band)
    unknown = ~(free | occupied)
    return occupied, free, unknown


def perceive(obs: TsdfVolume, cfg: PerceptionConfig = PerceptionConfig()) -> Segments:
    """Label connected object segments in a TSDF observation.

    Each occupied voxel also claims the run of unknown voxels directly below
    it down to the table, a crude amodal guess for the occluded body. Segments
    are 26-connected components after a small dilation, numbered in raster
    order; components smaller than ``min_segment_voxels`` are discarded as
    noise.
    """
    occupied, free, unknown = classify(obs, cfg)
    nz = obs.spec.dims[2]
    solid = occupied.copy()
    carry = np.zeros(obs.spec.dims[:2], dtype=bool)
    for z in range(nz - 1, -1, -1):
        carry = occupied[..., z] | (carry & unknown[..., z])
        solid[..., z] |= carry
    cube = np.ones((3, 3, 3), dtype=bool)
    grown = ndimage.binary_dilation(solid, cube, iterations=cfg.bridge) if cfg.bridge else solid
    labels, n = ndimage.label(grown, structure=cube)
    labels[~solid] = 0
    if n:
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        keep = sizes >= cfg.min_segment_voxels
        keep[0] = False
        remap = np.zeros(n + 1, dtype=labels.dtype)
        remap[keep] = np.arange(1, int(keep.sum()) + 1)
        labels = remap[labels]
        n = int(keep.sum())
    return Segments(labels, n, occupied, free, unknown)


# ---------------------------------------------------------------------------
# aggregation


def _split_by_history(segs: Segments, base_labels: np.ndarray, live: list[int], cfg: AggregateConfig) -> Segments:
    """Split segments whose voxels overlap several live history channels.

    Touching objects merge into one observed component; when the warped
    history separates them, each voxel goes to the nearest history channel.
    """
    labels = segs.labels
    n = segs.n
    if n == 0 or len(live) < 2:
        return segs
    new_labels = np.zeros_like(labels)
    next_label = 1
    channel_size = {c: int(np.count_nonzero(base_labels == c)) for c in live}
    objs = ndimage.find_objects(labels)
    for j in range(n):
        sl = objs[j]
        # pad the box so nearby history voxels can be found
        box = tuple(slice(max(s.start - 4, 0), min(s.stop + 4, d)) for s, d in zip(sl, labels.shape))
        in_seg = labels[box] == j + 1
        hist = base_labels[box]
        cands = []
        for c in live:
            ov = int(np.count_nonzero(in_seg & (hist == c)))
            if ov >= max(cfg.perception.min_segment_voxels, cfg.split_min_fraction * channel_size[c]):
                cands.append(c)
        if len(cands) < 2:
            new_labels[box][in_seg] = next_label
            next_label += 1
            continue
        dists = np.stack([ndimage.distance_transform_edt(hist != c) for c in cands])
        owner = np.argmin(dists, axis=0)
        for ci in range(len(cands)):
            part = in_seg & (owner == ci)
            if part.any():
                new_labels[box][part] = next_label
                next_label += 1
    return replace(segs, labels=new_labels, n=next_label - 1)


def _drop_smallest(segs: Segments, keep: int) -> Segments:
    sizes = np.bincount(segs.labels.ravel(), minlength=segs.n + 1)[1:]
    order = sorted(range(segs.n), key=lambda j: (-sizes[j], j))[:keep]
    remap = np.zeros(segs.n + 1, dtype=segs.labels.dtype)
    for new, j in enumerate(sorted(order)):
        remap[j + 1] = new + 1
    return replace(segs, labels=remap[segs.labels], n=keep)


def assign_segments(segs: Segments, base: InstanceMaskVolume, live: list[int]) -> dict[int, int]:
    """Map segment index -> channel.

    Segments are matched to history channels by maximal voxel overlap. A
    segment left without positive overlap takes the lowest-index empty
    channel, or failing that the unassigned live channel whose history
    centroid is nearest.
    """
    k = base.k
    n_obj = k - 1
    base_labels = base.labels().ravel()
    overlap = np.zeros((n_obj, n_obj))
    seg_flat = segs.labels.ravel()
    both = (seg_flat > 0) & (base_labels < n_obj)
    if np.any(both):
        np.add.at(overlap, (base_labels[both], seg_flat[both] - 1), 1.0)
    W = np.zeros((k, k))
    W[:n_obj, :n_obj] = -overlap
    perm = optimal_matching(W)
    seg_to_ch = {}
    for c in range(n_obj):
        j = perm[c]
        if j < segs.n and overlap[c, j] > 0:
            seg_to_ch[j] = c
    taken = set(seg_to_ch.values())
    for j in range(segs.n):
        if j in seg_to_ch:
            continue
        empty = [c for c in range(n_obj) if c not in live and c not in taken]
        if empty:
            c = empty[0]
        else:
            free_live = [c for c in range(n_obj) if c not in taken]
            c = min(free_live, key=lambda c: (_centroid_gap(base_labels, seg_flat, c, j + 1, base.spec), c))
        seg_to_ch[j] = c
        taken.add(c)
    return seg_to_ch


def _centroid_gap(base_labels, seg_flat, channel, seg_label, spec) -> float:
    a = np.flatnonzero(base_labels == channel)
    b = np.flatnonzero(seg_flat == seg_label)
    if len(a) == 0 or len(b) == 0:
        return np.inf
    ca = np.mean(np.stack(np.unravel_index(a, spec.dims), axis=1), axis=0)
    cb = np.mean(np.stack(np.unravel_index(b, spec.dims), axis=1), axis=0)
    return float(np.linalg.norm(ca - cb))


def aggregate(
    prior: DsrState | None,
    warped_prior: InstanceMaskVolume | None,
    obs: TsdfVolume,
    mode: AggregationMode = AggregationMode.DSR,
    cfg: AggregateConfig = AggregateConfig(),
    segments: Segments | None = None,
) -> DsrState:
    """Fuse one observation into the (optionally warped) history.

    ``segments`` may carry a precomputed ``perceive(obs)`` result.
    """
    mode = AggregationMode(mode)
    spec = obs.spec
    k = cfg.k
    if mode.warps and prior is not None and warped_prior is None:
        raise ValueError(f"mode {mode.value} needs a warped prior")
    if not mode.warps and warped_prior is not None:
        raise ValueError(f"mode {mode.value} does not take a warped prior")

    if prior is None or mode == AggregationMode.SINGLESTEP:
        base = InstanceMaskVolume.background_only(spec, k)
        prior_ids = (None,) * (k - 1)
    else:
        base = warped_prior if mode.warps else prior.masks
        prior_ids = prior.identities
    if base.k != k:
        raise ChannelMismatch(f"history has {base.k} channels, config expects {k}")
    check_same_grid(base, obs)
    next_id = prior.next_identity if prior is not None else 0
    step = prior.step + 1 if prior is not None else 0

    segs = segments if segments is not None else perceive(obs, cfg.perception)
    mass = base.probs[:-1].reshape(k - 1, -1).sum(axis=1)
    live = [c for c in range(k - 1) if mass[c] > cfg.empty_mass]
    base_labels = base.labels()
    if cfg.split_merged:
        segs = _split_by_history(segs, base_labels, live, cfg)
    if segs.n > k - 1:
        if cfg.overflow == "drop_smallest":
            segs = _drop_smallest(segs, k - 1)
        else:
            raise TooManyObjects(f"{segs.n} observed segments exceed {k - 1} object channels")

    seg_to_ch = assign_segments(segs, base, live)

    n = spec.n_voxels
    out = base.probs.reshape(k, n).copy()
    free = np.flatnonzero(segs.free.ravel())
    out[:, free] = 0.0
    out[k - 1, free] = 1.0
    seg_flat = segs.labels.ravel()
    ch_of_label = np.full(segs.n + 1, -1)
    for j, c in seg_to_ch.items():
        ch_of_label[j + 1] = c
    labelled = np.flatnonzero(seg_flat)
    chans = ch_of_label[seg_flat[labelled]]
    out[:, labelled] = 0.0
    out[chans, labelled] = 1.0 - cfg.eta
    out[k - 1, labelled] += cfg.eta

    if cfg.vanish_fraction is not None:
        kept = out[:-1].sum(axis=1)
        for c in live:
            if c not in seg_to_ch.values() and kept[c] < (1.0 - cfg.vanish_fraction) * mass[c]:
                out[k - 1] += out[c]
                out[c] = 0.0

    ids = list(prior_ids)
    for c in sorted(set(seg_to_ch.values())):
        if ids[c] is None or c not in live:
            ids[c] = next_id
            next_id += 1
    new_mass = out[:-1].sum(axis=1)
    for c in range(k - 1):
        if new_mass[c] <= cfg.empty_mass:
            ids[c] = None
    masks = InstanceMaskVolume(spec, out.reshape(k, *spec.dims))
    return DsrState(masks, step, tuple(ids), next_id)


def step(
    state: DsrState,
    predicted_masks: InstanceMaskVolume,
    predicted_transforms: TransformSet,
    obs_next: TsdfVolume,
    mode: AggregationMode = AggregationMode.DSR,
    cfg: AggregateConfig = AggregateConfig(),
    gt_flow: VectorVolume | None = None,
    gt_masks: InstanceMaskVolume | None = None,
    segments: Segments | None = None,
    flow: VectorVolume | None = None,
) -> DsrState:
    """Advance the state over one interaction and fuse the next observation.

    DSR warps with the blended predicted flow (``flow`` may carry it
    precomputed); GTWarp with the supplied ground-truth flow, weighted by the
    ground-truth masks; NoWarp and SingleStep skip warping.
    """
    mode = AggregationMode(mode)
    if mode == AggregationMode.DSR:
        F = flow if flow is not None else blended_flow(predicted_masks, predicted_transforms)
        warped = forward_warp(state.masks, F, predicted_masks)
        return aggregate(state, warped, obs_next, mode, cfg, segments)
    if mode == AggregationMode.GTWARP:
        if gt_flow is None or gt_masks is None:
            raise ValueError("GTWarp needs ground-truth flow and masks")
        warped = forward_warp(state.masks, gt_flow, gt_masks)
        return aggregate(state, warped, obs_next, mode, cfg, segments)
    return aggregate(state, None, obs_next, mode, cfg, segments)
