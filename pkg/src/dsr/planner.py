"""Shooting MPC for pushing objects towards a target configuration.

Candidate action sequences are sampled around the (predicted) object masks,
rolled forward with a motion predictor and hardened forward warping, and
scored by centroid error minus per-object IoU against the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ChannelMismatch, NoObjects
from .matching import optimal_assignment
from .metrics import iou_matrix, unordered_iou
from .predictors import MotionPredictor, OraclePredictor, make_predictor
from .sim.episode import observe
from .sim.policy import PolicyState, interaction_policy
from .sim.push import N_DIRECTIONS, PushAction, PushConfig, step_push
from .sim.render import CameraModel, default_camera
from .sim.scene import SceneState, drop_objects, gt_labels, make_rng
from .voxel import GridSpec, InstanceMaskVolume
from .warp import AggregateConfig, AggregationMode, DsrState, aggregate, step, warp_labels


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 3
    n_samples: int = 100
    # position-cost weight per object channel; a single value applies to all
    lam: tuple = (1.0,)
    radius: float = 8.0  # voxels around object footprints
    # keep start cells this far (voxels) from every footprint so the pusher starts clear
    clearance: float = 0.0
    seed: int = 0
    # L_pos charged when a target object has no predicted mask at all, m^2
    missing_penalty: float = 1.0
    # keep still when no sampled sequence beats the current state
    allow_idle: bool = True
    # also score every prefix of a sampled sequence (stopping early is a candidate)
    prefixes: bool = False
    # imagined masks keep a cell only if it gets this much splat weight (voxels)
    min_cover: float = 0.5
    # replans also score the unexecuted rest of the previous plan
    warm_start: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(float(v) for v in np.atleast_1d(self.lam)))
        if self.horizon < 1 or self.n_samples < 1:
            raise ValueError("horizon and n_samples must be at least 1")
        if min(self.lam) < 0:
            raise ValueError("position weights must be non-negative")
        if not 0 <= self.clearance <= self.radius:
            raise ValueError("clearance must lie in [0, radius]")

    def weights(self, n: int) -> np.ndarray:
        lam = np.asarray(self.lam)
        if len(lam) == 1:
            return np.full(n, lam[0])
        if len(lam) != n:
            raise ChannelMismatch(f"{len(lam)} position weights for {n} object channels")
        return lam


@dataclass
class TargetState:
    """Desired configuration as a hardened label volume.

    ``ids`` optionally names the object held by each channel so a simulator
    oracle can align channels exactly.
    """

    spec: GridSpec
    labels: np.ndarray
    k: int = 5
    ids: tuple | None = None

    @classmethod
    def from_scene(cls, scene: SceneState, spec: GridSpec = GridSpec(), k: int = 5) -> "TargetState":
        return cls(spec, gt_labels(scene, spec, k), k, tuple(scene.ids))

    @property
    def masks(self) -> InstanceMaskVolume:
        return InstanceMaskVolume.from_labels(self.spec, self.labels, self.k)


@dataclass
class PlanResult:
    actions: list  # empty when staying put is cheapest
    cost: float
    candidates: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    idle_cost: float = np.inf

    def record(self) -> dict:
        return {"actions": [a.to_dict() for a in self.actions], "predicted_cost": self.cost}


def _labels(x) -> np.ndarray:
    if isinstance(x, InstanceMaskVolume):
        return x.labels()
    if isinstance(x, TargetState):
        return x.labels
    return np.asarray(x)


def footprint_cells(labels: np.ndarray, k: int) -> np.ndarray:
    """(nx, ny) flags of cells under any object voxel."""
    return (np.asarray(labels) != k - 1).any(axis=2)


def candidate_cells(labels: np.ndarray, k: int, radius: float, clearance: float = 0.0) -> np.ndarray:
    """Flat cell indices within ``radius`` voxels of a footprint and at least ``clearance`` away from all."""
    fp = footprint_cells(labels, k)
    if not fp.any():
        raise NoObjects("no object channel to act on")
    dist = ndimage.distance_transform_edt(~fp).ravel()
    return np.flatnonzero((dist <= radius) & (dist >= clearance))


def _draw(cells: np.ndarray, shape, n: int, rng) -> list[PushAction]:
    pick = cells[rng.integers(len(cells), size=n)]
    dirs = rng.integers(N_DIRECTIONS, size=n)
    px, py = np.unravel_index(pick, shape)
    return [PushAction(int(x), int(y), int(d)) for x, y, d in zip(px, py, dirs)]


def sample_actions(state, cfg: PlannerConfig = PlannerConfig(), rng=None, n: int | None = None) -> list[PushAction]:
    """Pushes starting within ``cfg.radius`` voxels of some object footprint, directions uniform."""
    rng = make_rng(cfg.seed) if rng is None else rng
    masks = state.masks if isinstance(state, DsrState) else state
    labels = _labels(masks)
    k = masks.k
    cells = candidate_cells(labels, k, cfg.radius, cfg.clearance)
    return _draw(cells, labels.shape[:2], n or cfg.n_samples, rng)


def uniform_actions(spec: GridSpec, n: int, rng) -> list[PushAction]:
    cells = np.arange(spec.dims[0] * spec.dims[1])
    return _draw(cells, spec.dims[:2], n, rng)


def channel_centroids(labels: np.ndarray, k: int, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per object channel: centroid in meters (nan when empty) and voxel count."""
    flat = np.asarray(labels).ravel()
    src = np.flatnonzero(flat != k - 1)
    ch = flat[src]
    idx = np.stack(np.unravel_index(src, spec.dims), axis=1)
    pos = np.asarray(spec.origin) + (idx + 0.5) * spec.voxel_size
    count = np.bincount(ch, minlength=k)[: k - 1].astype(float)
    sums = np.stack([np.bincount(ch, weights=pos[:, a], minlength=k)[: k - 1] for a in range(3)], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cent = sums / count[:, None]
    return cent, count


def rollout_cost(pred, target, cfg: PlannerConfig = PlannerConfig(), spec: GridSpec | None = None) -> float:
    """sum_i lam_i * |centroid_pred_i - centroid_target_i|^2 - IoU_i over non-empty target channels."""
    p = _labels(pred)
    g = _labels(target)
    if p.shape != g.shape:
        raise ChannelMismatch(f"prediction {p.shape} and target {g.shape} differ")
    k = pred.k if hasattr(pred, "k") else target.k
    if hasattr(target, "k") and target.k != k:
        raise ChannelMismatch(f"prediction has {k} channels, target {target.k}")
    spec = spec or getattr(pred, "spec", None) or target.spec
    cp, np_ = channel_centroids(p, k, spec)
    cg, ng = channel_centroids(g, k, spec)
    iou = np.diag(iou_matrix(g, p, k))
    lam = cfg.weights(k - 1)
    cost = 0.0
    for i in range(k - 1):
        if ng[i] == 0:
            continue
        lpos = cfg.missing_penalty if np_[i] == 0 else float(np.sum((cp[i] - cg[i]) ** 2))
        cost += lam[i] * lpos - (iou[i] if np_[i] else 0.0)
    return float(cost)


def align_target(labels: np.ndarray, target: TargetState, mapping: dict | None = None) -> np.ndarray:
    """Relabel the target so state channel c and target channel c hold the same object.

    ``mapping`` (state channel -> target channel) comes from an oracle when
    available; otherwise channels are paired by squared centroid distance.
    """
    k = target.k
    n = k - 1
    if mapping is None:
        cs, ns = channel_centroids(labels, k, target.spec)
        ct, nt = channel_centroids(target.labels, k, target.spec)
        cost = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if ns[i] and nt[j]:
                    cost[i, j] = float(np.sum((cs[i] - ct[j]) ** 2))
                elif ns[i] or nt[j]:
                    cost[i, j] = 1.0
        perm = optimal_assignment(cost)
        mapping = {i: perm[i] for i in range(n)}
    # complete a partial mapping with the unused channels in order
    used = set(mapping.values())
    rest = iter(j for j in range(n) if j not in used)
    full = [mapping[i] if i in mapping else next(rest) for i in range(n)]
    lut = np.full(k, k - 1)
    for i, j in enumerate(full):
        lut[j] = i
    return lut[target.labels]


def oracle_mapping(predictor: MotionPredictor, labels: np.ndarray, target: TargetState) -> dict | None:
    if not isinstance(predictor, OraclePredictor) or target.ids is None:
        return None
    where = {obj_id: c for c, obj_id in enumerate(target.ids)}
    return {c: where[i] for c, i in predictor.channel_objects(labels, target.k).items() if i in where}


def plan(
    state: DsrState,
    target: TargetState,
    predictor: MotionPredictor,
    cfg: PlannerConfig = PlannerConfig(),
    rng=None,
    horizon: int | None = None,
    warm: list | None = None,
) -> PlanResult:
    """Sample ``n_samples`` action sequences and return the cheapest; ties go to the first sampled.

    ``warm`` (e.g. the unexecuted tail of the previous plan) is scored ahead
    of the samples. With ``cfg.prefixes`` each sequence's shorter prefixes
    are candidates as well, listed right before it. With ``cfg.allow_idle``
    the empty sequence competes too and wins ties.
    """
    rng = make_rng(cfg.seed) if rng is None else rng
    horizon = horizon or cfg.horizon
    spec = state.masks.spec
    k = state.masks.k
    labels0 = state.masks.labels()
    candidate_cells(labels0, k, cfg.radius)  # raises NoObjects early
    cells0 = candidate_cells(labels0, k, cfg.radius, cfg.clearance)
    aligned = TargetState(spec, align_target(labels0, target, oracle_mapping(predictor, labels0, target)), k)
    seqs, costs = [], []

    def rollout(given):
        lab, cells_for, cells = labels0, labels0, cells0
        model = predictor
        seq = []
        for t in range(len(given) if given is not None else horizon):
            if given is not None:
                a = given[t]
            else:
                if lab is not cells_for:  # a push that hits nothing leaves the labels as they are
                    try:
                        cells = candidate_cells(lab, k, cfg.radius, cfg.clearance)
                    except NoObjects:
                        # every object was pushed off the grid; later pushes change nothing
                        cells = np.arange(lab.shape[0] * lab.shape[1])
                    cells_for = lab
                a = _draw(cells, lab.shape[:2], 1, rng)[0]
            lab = warp_labels(spec, lab, k, model.transforms_for(lab, k, a), cfg.min_cover)
            model = model.advance(a)
            seq.append(a)
            if cfg.prefixes and t < horizon - 1:
                seqs.append(list(seq))
                costs.append(rollout_cost(lab, aligned, cfg, spec))
        seqs.append(seq)
        costs.append(rollout_cost(lab, aligned, cfg, spec))

    if warm:
        rollout(list(warm)[:horizon])
    for _ in range(cfg.n_samples):
        rollout(None)
    best = int(np.argmin(costs))
    if cfg.allow_idle:
        idle = rollout_cost(labels0, aligned, cfg, spec)
        if idle <= costs[best]:
            return PlanResult([], idle, seqs, costs, idle)
        return PlanResult(seqs[best], costs[best], seqs, costs, idle)
    return PlanResult(seqs[best], costs[best], seqs, costs)


@dataclass
class ExecutionResult:
    scene: SceneState
    actions: list
    iou: float
    predicted_costs: list = field(default_factory=list)

    def record(self) -> dict:
        return {
            "actions": [a.to_dict() for a in self.actions],
            "achieved_iou": self.iou,
            "predicted_costs": self.predicted_costs,
        }


def achieved_iou(scene: SceneState, target: TargetState) -> float:
    return unordered_iou(target.masks, InstanceMaskVolume.from_labels(target.spec, gt_labels(scene, target.spec, target.k), target.k))[0]


def execute_plan(
    scene: SceneState,
    actions: list,
    target: TargetState,
    replan: bool = False,
    predictor: str = "oracle",
    cfg: PlannerConfig = PlannerConfig(),
    cam: CameraModel | None = None,
    push_cfg: PushConfig = PushConfig(),
    agg_cfg: AggregateConfig = AggregateConfig(overflow="drop_smallest"),
    rng=None,
    n_steps: int | None = None,
) -> ExecutionResult:
    """Execute ``actions`` in the simulator and score the final scene against ``target``.

    With ``replan`` only the first action is taken as given; the scene is
    then observed, the state updated, and the remaining steps are planned
    again (shrinking horizon) for ``n_steps`` steps in total (default: the
    plan length). A replan that prefers to stay put spends its step idle.
    """
    spec = target.spec
    rng = make_rng(cfg.seed) if rng is None else rng
    actions = list(actions)
    n = len(actions) if n_steps is None else n_steps
    done = []
    costs = []
    if not replan or n == 0:
        for a in actions:
            scene = step_push(scene, a, spec, push_cfg).scene
            done.append(a)
        return ExecutionResult(scene, done, achieved_iou(scene, target))

    cam = cam or default_camera()
    k = target.k
    _, tsdf, _ = observe(scene, cam, spec, k)
    state = aggregate(None, None, tsdf, AggregationMode.DSR, agg_cfg)
    tail = actions[1:]
    for i in range(n):
        if i == 0 and actions:
            a = actions[0]
        else:
            warm = tail if cfg.warm_start else None
            try:
                res = plan(state, target, make_predictor(predictor, spec, scene, push_cfg), cfg, rng, horizon=n - i, warm=warm)
            except NoObjects:
                break
            costs.append(res.cost)
            if not res.actions:
                tail = []
                continue
            a, tail = res.actions[0], res.actions[1:]
        model = make_predictor(predictor, spec, scene, push_cfg)
        pm, pt = model.predict(state, a)
        scene = step_push(scene, a, spec, push_cfg).scene
        done.append(a)
        _, tsdf, _ = observe(scene, cam, spec, k)
        state = step(state, pm, pt, tsdf, AggregationMode.DSR, agg_cfg)
    return ExecutionResult(scene, done, achieved_iou(scene, target), costs)


def initial_state(scene: SceneState, spec: GridSpec, k: int = 5, cam: CameraModel | None = None, agg_cfg=AggregateConfig(overflow="drop_smallest")) -> DsrState:
    _, tsdf, _ = observe(scene, cam or default_camera(), spec, k)
    return aggregate(None, None, tsdf, AggregationMode.DSR, agg_cfg)


def mpc(
    scene: SceneState,
    target: TargetState,
    predictor: str = "oracle",
    cfg: PlannerConfig = PlannerConfig(),
    replan: bool = True,
    cam: CameraModel | None = None,
    push_cfg: PushConfig = PushConfig(),
) -> ExecutionResult:
    """Plan from the observed scene, then execute open loop or with replanning."""
    rng = make_rng(cfg.seed)
    state = initial_state(scene, target.spec, target.k, cam)
    first = plan(state, target, make_predictor(predictor, target.spec, scene, push_cfg), cfg, rng)
    out = execute_plan(scene, first.actions, target, replan, predictor, cfg, cam, push_cfg, rng=rng, n_steps=cfg.horizon if replan else None)
    out.predicted_costs = [first.cost] + out.predicted_costs
    return out


def random_baseline(scene: SceneState, target: TargetState, n_actions: int, seed: int, push_cfg: PushConfig = PushConfig()) -> ExecutionResult:
    """Uniformly random pushes anywhere on the grid."""
    actions = uniform_actions(target.spec, n_actions, make_rng(seed))
    return execute_plan(scene, actions, target, replan=False, push_cfg=push_cfg)


def make_target(seed: int, n_objects: int = 3, n_pushes: int = 3, k: int = 5, spec: GridSpec = GridSpec()):
    """Start scene and a target reached from it by ``n_pushes`` policy pushes."""
    rng = make_rng(seed)
    start = drop_objects(rng, n_objects, k)
    scene = start
    pstate = PolicyState()
    for _ in range(n_pushes):
        scene = step_push(scene, interaction_policy(scene, pstate, rng, spec), spec).scene
    return start, TargetState.from_scene(scene, spec, k)
