import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsr.errors import ActionOutOfGrid, PlacementFailure, TooManyObjects
from dsr.sim.policy import (
    FAR_PENALTY,
    PolicyState,
    bump_score,
    direction_scores,
    interaction_policy,
    push_behind,
    softmax,
)
from dsr.sim.push import (
    PushAction,
    PushConfig,
    action_map,
    cell_center,
    direction_vector,
    push_segment,
    step_push,
    world_to_cell,
)
from dsr.sim.render import default_camera, render_depth
from dsr.sim.scene import (
    SceneState,
    drop_objects,
    gt_labels,
    make_rng,
    max_interpenetration,
    object_voxels,
)
from dsr.sim.shapes import Circle, RigidObject, separation
from dsr.sim.tsdf import fuse_tsdf
from dsr.voxel import GridSpec

G = GridSpec()
VS = G.voxel_size


def cube_on_cell(px, py, s=0.03, yaw=0.0, obj_id=0):
    x, y = cell_center(G, px, py)
    return RigidObject.on_table(obj_id, "box", (s, s, s), x, y, yaw)


# ---------------------------------------------------------------------------
# shapes


def test_separation_of_circles():
    v = separation(Circle(np.zeros(2), 1.0), Circle(np.array([1.5, 0.0]), 1.0))
    np.testing.assert_allclose(v, [0.5, 0.0])
    assert separation(Circle(np.zeros(2), 1.0), Circle(np.array([3.0, 0.0]), 1.0)) is None


def test_separation_box_box_resolves_overlap():
    a = RigidObject.on_table(0, "box", (0.04, 0.04, 0.04), 0, 0, 0.3)
    b = RigidObject.on_table(1, "box", (0.04, 0.04, 0.04), 0.03, 0.01, -0.2)
    v = separation(a.footprint(), b.footprint())
    moved = b.moved(v * (1 + 1e-9))
    assert separation(a.footprint(), moved.footprint()) is None


@pytest.mark.parametrize("shape,size", [("box", (0.03, 0.02, 0.04)), ("cylinder", (0.015, 0.05)), ("sphere", (0.02,))])
def test_voxelised_volume_matches_solid(shape, size):
    obj = RigidObject.on_table(0, shape, size, 0.01, -0.02, 0.4)
    if shape == "box":
        vol = np.prod(size)
    elif shape == "cylinder":
        vol = np.pi * size[0] ** 2 * size[1]
    else:
        vol = 4 / 3 * np.pi * size[0] ** 3
    assert len(object_voxels(obj, G)) * VS**3 == pytest.approx(vol, rel=0.2)


def test_ray_hits_box_top():
    obj = RigidObject.on_table(0, "box", (0.04, 0.04, 0.04), 0, 0)
    t = obj.intersect(np.array([[0.0, 0.0, 1.0], [0.5, 0.5, 1.0]]), np.array([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]]))
    assert t[0] == pytest.approx(0.96)
    assert np.isinf(t[1])


# ---------------------------------------------------------------------------
# scenes


def test_drop_is_deterministic_and_clear():
    a = drop_objects(7, 4)
    b = drop_objects(7, 4)
    assert a == b or a.to_dict() == b.to_dict()
    assert max_interpenetration(a) == 0.0
    assert SceneState.from_dict(a.to_dict()).to_dict() == a.to_dict()


def test_drop_guards():
    with pytest.raises(TooManyObjects):
        drop_objects(0, 5, k=5)
    with pytest.raises(PlacementFailure):
        drop_objects(0, 4, drop_half=0.001, max_attempts=1, clearance=1.0)


def test_gt_labels_channels_follow_ids():
    scene = drop_objects(3, 3)
    lab = gt_labels(scene, G)
    for c, obj in enumerate(scene.objects):
        assert np.all(lab.ravel()[object_voxels(obj, G)] == c)
    assert set(np.unique(lab)) == {0, 1, 2, 4}


# ---------------------------------------------------------------------------
# pushing


def test_action_validation_and_map():
    with pytest.raises(ActionOutOfGrid):
        PushAction(0, 0, 8)
    with pytest.raises(ActionOutOfGrid):
        step_push(SceneState(), PushAction(128, 0, 0))
    m = action_map(PushAction(3, 4, 5), G)
    assert m.shape == (8, 128, 128) and m.sum() == 1 and m[5, 3, 4] == 1
    assert PushAction.from_dict(PushAction(3, 4, 5).to_dict()) == PushAction(3, 4, 5)


@given(st.integers(0, 127), st.integers(0, 127))
def test_cell_roundtrip(px, py):
    assert world_to_cell(G, cell_center(G, px, py)) == (px, py)


def test_directions_are_unit_and_45_degrees_apart():
    for d in range(8):
        v = direction_vector(d)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert v @ direction_vector((d + 1) % 8) == pytest.approx(np.cos(np.pi / 4))
    start, end = push_segment(PushAction(10, 10, 2), G)
    np.testing.assert_allclose(end - start, [0, 0.12], atol=1e-15)


@given(st.integers(0, 3), st.floats(0.02, 0.04), st.integers(3, 20))
def test_centered_push_translates_by_overlap(d4, s, gap_vox):
    d = 2 * d4  # axis-aligned directions
    cfg = PushConfig()
    cube = cube_on_cell(64, 64, s)
    v = direction_vector(d)
    back = cube.center[:2] - v * (s / 2 + cfg.pusher_radius + gap_vox * VS)
    px, py = world_to_cell(G, back)
    start = cell_center(G, px, py)
    res = step_push(SceneState((cube,)), PushAction(px, py, d), G, cfg)
    # pusher front at the end of the stroke minus the box's back face
    expect = max((start + v * (cfg.stroke + cfg.pusher_radius)) @ v - (cube.center[:2] @ v - s / 2), 0.0)
    moved = res.scene.objects[0].center[:2] - cube.center[:2]
    np.testing.assert_allclose(moved, v * expect, atol=1e-9)
    assert res.scene.objects[0].yaw == pytest.approx(0.0, abs=1e-12)


def test_miss_leaves_scene_and_gives_identity():
    scene = SceneState((cube_on_cell(64, 64),))
    res = step_push(scene, PushAction(5, 5, 0))
    assert res.scene == scene
    assert res.touched == frozenset()
    assert res.transforms[0].is_identity


def test_off_center_push_rotates_with_the_lever_arm():
    cube = cube_on_cell(64, 64, 0.04)
    # start 3 voxels north of the center line, pushing east
    res = step_push(SceneState((cube,)), PushAction(50, 67, 0))
    after = res.scene.objects[0]
    assert after.yaw < 0  # contact above the centroid turns the box clockwise
    assert abs(after.yaw) <= PushConfig().yaw_cap + 1e-12


def test_substep_refinement_converges():
    scene = SceneState((cube_on_cell(64, 64, 0.035, 0.2), cube_on_cell(78, 66, 0.03, -0.1, 1)))
    a = PushAction(50, 66, 0)
    coarse = step_push(scene, a, G, PushConfig(substeps=120))
    fine = step_push(scene, a, G, PushConfig(substeps=1200))
    for o1, o2 in zip(coarse.scene.objects, fine.scene.objects):
        assert np.linalg.norm(o1.center - o2.center) < 0.003
        assert abs(o1.yaw - o2.yaw) < 0.05
    assert coarse.touched == fine.touched == frozenset({0, 1})


@given(st.integers(0, 10_000), st.integers(0, 7), st.integers(-6, 6), st.integers(-6, 6))
def test_push_invariants(seed, d, ox, oy):
    scene = drop_objects(seed, 3)
    target = scene.objects[seed % 3]
    a = push_behind(target, d)
    a = PushAction(int(np.clip(a.px + ox, 0, 127)), int(np.clip(a.py + oy, 0, 127)), d)
    res = step_push(scene, a)
    assert max_interpenetration(res.scene) < 1e-4
    for before, after in zip(scene.objects, res.scene.objects):
        T = res.transforms[before.id]
        lo, hi = after.aabb()
        assert np.all(lo[:2] >= -0.256 - 1e-9) and np.all(hi[:2] <= 0.256 + 1e-9)
        np.testing.assert_allclose(T.apply(before.body_points()), after.body_points(), atol=1e-9)
        if before.id not in res.touched:
            assert after == before and T.is_identity


def test_push_chain_carries_the_second_object():
    a = cube_on_cell(60, 64, 0.03)
    b = cube_on_cell(69, 64, 0.03, obj_id=1)
    res = step_push(SceneState((a, b)), PushAction(50, 64, 0))
    assert res.touched == frozenset({0, 1})
    assert res.scene.objects[1].center[0] > b.center[0] + 0.05


# ---------------------------------------------------------------------------
# interaction policy


def test_score_cycle():
    seq = [0]
    for _ in range(5):
        seq.append(bump_score(seq[-1]))
    assert seq == [0, 1, 2, -2, -1, 0]


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=8))
def test_softmax_is_a_distribution(x):
    p = softmax(x)
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)


def test_direction_scores():
    assert np.all(direction_scores([0, 0], [0, 0], [0, 0]) == 0)
    q = direction_scores([0, 0], [0.05, 0], [0.1, 0])
    assert q[0] == pytest.approx(3.5)
    assert q[4] == pytest.approx(-3.5)
    far = direction_scores([0.21, 0], [0.21, 0], [0.21, 0])
    assert far[0] == pytest.approx(FAR_PENALTY)
    assert far[4] == 0 and far[2] == 0


@given(st.integers(0, 10_000), st.integers(0, 7))
def test_push_behind_hits_the_object(seed, d):
    scene = drop_objects(seed, 2)
    obj = scene.objects[0]
    a = push_behind(obj, d)
    start = cell_center(G, a.px, a.py)
    # the pusher starts clear of the object
    assert separation(Circle(start, PushConfig().pusher_radius), obj.footprint()) is None
    res = step_push(SceneState((obj,)), a)
    assert obj.id in res.touched


def test_policy_is_deterministic_and_updates_scores():
    scene = drop_objects(5, 4)

    def run():
        rng = make_rng(11)
        ps = PolicyState()
        return [interaction_policy(scene, ps, rng) for _ in range(6)], ps

    a1, ps = run()
    a2, _ = run()
    assert a1 == a2
    assert sum(1 for v in ps.scores.values() if v != 0) >= 1


# ---------------------------------------------------------------------------
# rendering and TSDF


def test_empty_scene_depth_is_the_table():
    cam = default_camera()
    depth = render_depth(SceneState(), cam)
    o, d = cam.rays()
    hit = o + d * depth.reshape(-1, 1)
    ok = depth.ravel() > 0
    np.testing.assert_allclose(hit[ok, 2], 0.0, atol=1e-12)


def test_tsdf_signs_around_an_object():
    cam = default_camera()
    cube = RigidObject.on_table(0, "box", (0.04, 0.04, 0.04), 0, 0)
    tsdf = fuse_tsdf(render_depth(SceneState((cube,)), cam), cam, G)
    c = G.centers()
    inside = cube.contains(c) & tsdf.observed
    assert inside.any() and np.all(tsdf.values[inside] <= 0)
    above = (np.abs(c[..., 0]) < 0.01) & (np.abs(c[..., 1]) < 0.01) & (c[..., 2] > 0.07) & tsdf.observed
    assert above.any() and np.all(tsdf.values[above] > 0)
    assert np.all(np.abs(tsdf.values) <= 1)
