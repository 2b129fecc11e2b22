from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsr.errors import ChannelMismatch, NonFiniteFlow, TooManyObjects
from dsr.rigid import SE3Transform, TransformSet, blended_flow
from dsr.voxel import InstanceMaskVolume, TsdfVolume, VectorVolume
from dsr.warp import (
    AggregateConfig,
    AggregationMode,
    DsrState,
    PerceptionConfig,
    aggregate,
    forward_warp,
    perceive,
    predict_next,
    sharpen,
    step,
    warp_labels,
)

from conftest import SMALL, random_labels, random_masks, splat_oracle

seeds = st.integers(0, 2**31 - 1)


def uniform_flow(shift_vox):
    f = np.broadcast_to(np.asarray(shift_vox, dtype=float) * SMALL.voxel_size, (*SMALL.dims, 3))
    return VectorVolume(SMALL, f.copy())


@given(seeds)
def test_zero_flow_is_identity(seed):
    rng = np.random.default_rng(seed)
    S = random_masks(rng)
    M = random_masks(rng)
    out = forward_warp(S, VectorVolume.zeros(SMALL), M)
    assert np.array_equal(out.probs, S.probs)


@given(seeds, st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-2, 2)))
def test_integer_shift_permutes_interior(seed, shift):
    rng = np.random.default_rng(seed)
    S = random_masks(rng)
    M = random_masks(rng)
    out = forward_warp(S, uniform_flow(shift), M).probs
    dst = tuple(slice(max(s, 0), n + min(s, 0)) for s, n in zip(shift, SMALL.dims))
    src = tuple(slice(max(-s, 0), n + min(-s, 0)) for s, n in zip(shift, SMALL.dims))
    assert np.array_equal(out[(slice(None), *dst)], S.probs[(slice(None), *src)])


@given(seeds)
def test_fractional_flow_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    S = random_masks(rng)
    M = random_masks(rng, sparsity=0.3)
    F = VectorVolume(SMALL, rng.normal(0, 1.5, (*SMALL.dims, 3)) * SMALL.voxel_size)
    out = forward_warp(S, F, M)
    np.testing.assert_allclose(out.probs, splat_oracle(S, F, M), rtol=0, atol=1e-9)


@given(seeds)
def test_output_stays_on_simplex(seed):
    rng = np.random.default_rng(seed)
    S = random_masks(rng)
    M = random_masks(rng, sparsity=0.5)
    F = VectorVolume(SMALL, rng.normal(0, 2, (*SMALL.dims, 3)) * SMALL.voxel_size)
    out = forward_warp(S, F, M)
    s = out.probs.sum(axis=0)
    assert np.all(np.abs(s - 1) <= 1e-6)
    assert out.probs.min() >= 0


def test_targets_without_weight_become_background():
    lab = np.full(SMALL.dims, 4)
    lab[2:4, 2:4, 0:2] = 0
    S = InstanceMaskVolume.from_labels(SMALL, lab, 5)
    out = forward_warp(S, uniform_flow((5, 0, 0)), S)
    expect = np.full(SMALL.dims, 4)
    expect[7:9, 2:4, 0:2] = 0
    np.testing.assert_array_equal(out.labels(), expect)


def test_flow_out_of_grid_drops_mass():
    lab = np.full(SMALL.dims, 4)
    lab[0, 0, 0] = 1
    S = InstanceMaskVolume.from_labels(SMALL, lab, 5)
    out = forward_warp(S, uniform_flow((-1, 0, 0)), S)
    assert out.object_mass().sum() == 0


def test_warp_rejects_bad_inputs():
    S = random_masks(np.random.default_rng(0))
    bad = np.zeros((*SMALL.dims, 3))
    bad[0, 0, 0, 0] = np.inf
    with pytest.raises(NonFiniteFlow):
        forward_warp(S, VectorVolume(SMALL, bad), S)
    with pytest.raises(ChannelMismatch):
        forward_warp(S, VectorVolume.zeros(SMALL), random_masks(np.random.default_rng(1), k=3))


@given(seeds)
def test_warp_labels_equals_predict_next_on_hard_masks(seed):
    rng = np.random.default_rng(seed)
    lab = random_labels(rng)
    T = TransformSet.from_objects(
        5, {c: SE3Transform((0, 0, rng.normal(0, 0.2)), tuple(rng.normal(0, 0.015, 3))) for c in range(3)}
    )
    m = InstanceMaskVolume.from_labels(SMALL, lab, 5)
    ref = predict_next(m, m, T).labels()
    np.testing.assert_array_equal(warp_labels(SMALL, lab, 5, T), ref)


@given(st.one_of(st.floats(0.05, 0.45), st.floats(0.55, 0.95)), st.integers(-2, 2), st.integers(-1, 1))
def test_cover_threshold_keeps_box_volume(f, ix, iy):
    lab = np.full(SMALL.dims, 4)
    lab[3:7, 2:5, 0:3] = 1
    # fractional along x only: each edge column keeps exactly one of its two targets
    shift = np.array([ix + f, iy, 0.0]) * SMALL.voxel_size
    T = TransformSet.from_objects(5, {1: SE3Transform(translation=tuple(shift))})
    grown = warp_labels(SMALL, lab, 5, T)
    kept = warp_labels(SMALL, lab, 5, T, min_cover=0.5)
    assert np.count_nonzero(kept == 1) == np.count_nonzero(lab == 1)
    # the plain hardened warp labels every touched cell
    assert np.count_nonzero(grown == 1) == 5 * 3 * 3
    assert np.all(grown[kept == 1] == 1)


def test_predict_next_uses_blended_flow():
    rng = np.random.default_rng(3)
    S = random_masks(rng)
    P = sharpen(random_masks(rng))
    T = TransformSet.from_objects(5, {0: SE3Transform(translation=(0.013, 0, 0))})
    a = predict_next(S, P, T)
    b = forward_warp(S, blended_flow(P, T), P)
    np.testing.assert_array_equal(a.probs, b.probs)


# ---------------------------------------------------------------------------
# perception and aggregation on hand-built observations


def box_observation(boxes, hidden=()):
    """TSDF of axis-aligned voxel boxes seen from straight above.

    Voxels above each box are observed free, its top layer observed surface,
    everything below unobserved. ``hidden`` boxes leave their column unknown.
    """
    vals = np.ones(SMALL.dims)
    obs = np.ones(SMALL.dims, dtype=bool)
    for (x0, x1, y0, y1, top), is_hidden in [(b, False) for b in boxes] + [(b, True) for b in hidden]:
        col = (slice(x0, x1), slice(y0, y1))
        if is_hidden:
            obs[col] = False
            continue
        vals[col + (slice(top, top + 1),)] = -0.1
        obs[col + (slice(0, top),)] = False
    return TsdfVolume(SMALL, vals, obs, truncation=0.02)


PCFG = PerceptionConfig(occupied_band=0.004, min_segment_voxels=2, bridge=0)
ACFG = AggregateConfig(perception=PCFG)


def test_perceive_fills_columns_below_surfaces():
    segs = perceive(box_observation([(1, 3, 1, 3, 2), (7, 10, 5, 8, 3)]), PCFG)
    assert segs.n == 2
    first = np.zeros(SMALL.dims, dtype=bool)
    first[1:3, 1:3, 0:3] = True
    assert np.array_equal(segs.labels == 1, first)
    assert np.count_nonzero(segs.labels == 2) == 3 * 3 * 4


def test_bridge_joins_close_fragments():
    obs = box_observation([(1, 3, 1, 3, 2), (4, 6, 1, 3, 2)])
    assert perceive(obs, PCFG).n == 2
    assert perceive(obs, PerceptionConfig(occupied_band=0.004, min_segment_voxels=2, bridge=1)).n == 1


def test_singlestep_forgets_and_nowarp_remembers_hidden_objects():
    first = box_observation([(1, 3, 1, 3, 2), (7, 10, 5, 8, 3)])
    # the second box is now hidden (its column unobserved)
    second = box_observation([(1, 3, 1, 3, 2)], hidden=[(7, 10, 5, 8, 3)])
    for mode, expect in [(AggregationMode.NOWARP, 2), (AggregationMode.SINGLESTEP, 1)]:
        s0 = aggregate(None, None, first, mode, ACFG)
        s1 = aggregate(s0, None, second, mode, ACFG)
        assert len(s1.live_channels()) == expect, mode
        s1.masks.validate()


def test_observed_free_space_clears_history():
    first = box_observation([(1, 3, 1, 3, 2)])
    empty = box_observation([])
    s0 = aggregate(None, None, first, AggregationMode.NOWARP, ACFG)
    s1 = aggregate(s0, None, empty, AggregationMode.NOWARP, ACFG)
    assert s1.live_channels() == []
    assert s1.identities == (None,) * 4


def test_stale_remainder_of_a_moved_object_is_dropped():
    s0 = aggregate(None, None, box_observation([(1, 3, 1, 3, 2)]), AggregationMode.NOWARP, ACFG)
    # the box moved away unpredicted; only the bottom layer of its old column stays unseen
    obs = box_observation([(1, 3, 5, 7, 2)])
    obs.observed[1:3, 1:3, 0] = False
    s1 = aggregate(s0, None, obs, AggregationMode.NOWARP, ACFG)
    assert len(s1.live_channels()) == 1
    assert s1.masks.labels()[1, 1, 0] == 4
    keep = aggregate(s0, None, obs, AggregationMode.NOWARP, replace(ACFG, vanish_fraction=None))
    assert len(keep.live_channels()) == 2


def test_fully_hidden_object_is_not_dropped():
    s0 = aggregate(None, None, box_observation([(1, 3, 1, 3, 2), (7, 10, 5, 8, 3)]), AggregationMode.NOWARP, ACFG)
    # one voxel of the hidden column shows free space: a small loss keeps the channel
    obs = box_observation([(1, 3, 1, 3, 2)], hidden=[(7, 10, 5, 8, 3)])
    obs.observed[7, 5, 3] = True
    s1 = aggregate(s0, None, obs, AggregationMode.NOWARP, ACFG)
    assert len(s1.live_channels()) == 2


def test_channels_follow_warped_history():
    a = (1, 3, 1, 3, 2)
    b = (7, 10, 5, 8, 3)
    s0 = aggregate(None, None, box_observation([a, b]), AggregationMode.DSR, ACFG)
    lab0 = s0.masks.labels()
    ch_a, ch_b = lab0[1, 1, 0], lab0[8, 6, 0]
    # box a moves 3 voxels along +y; the warp carries its channel along
    moved = (1, 3, 4, 6, 2)
    T = TransformSet.from_objects(5, {int(ch_a): SE3Transform(translation=(0, 3 * SMALL.voxel_size, 0))})
    pm = sharpen(s0.masks)
    s1 = step(s0, pm, T, box_observation([moved, b]), AggregationMode.DSR, ACFG)
    lab1 = s1.masks.labels()
    assert lab1[1, 4, 0] == ch_a and lab1[8, 6, 0] == ch_b
    assert s1.identities == s0.identities
    assert s1.step == 1


def test_mode_argument_checks():
    obs = box_observation([(1, 3, 1, 3, 2)])
    s0 = aggregate(None, None, obs, AggregationMode.DSR, ACFG)
    with pytest.raises(ValueError):
        aggregate(s0, None, obs, AggregationMode.DSR, ACFG)
    with pytest.raises(ValueError):
        aggregate(s0, s0.masks, obs, AggregationMode.NOWARP, ACFG)
    with pytest.raises(ValueError):
        step(s0, None, None, obs, AggregationMode.GTWARP, ACFG)


def test_overflow_policy():
    boxes = [(0, 2, 0, 2, 1), (4, 6, 0, 2, 1), (8, 10, 0, 2, 1), (0, 2, 5, 7, 1), (5, 8, 5, 8, 1)]
    obs = box_observation(boxes)
    with pytest.raises(TooManyObjects):
        aggregate(None, None, obs, AggregationMode.SINGLESTEP, ACFG)
    cfg = AggregateConfig(perception=PCFG, overflow="drop_smallest")
    s = aggregate(None, None, obs, AggregationMode.SINGLESTEP, cfg)
    assert len(s.live_channels()) == 4
    # the largest segment survives
    assert s.masks.labels()[6, 6, 0] != 4


def test_state_save_load(tmp_path):
    s = aggregate(None, None, box_observation([(1, 3, 1, 3, 2)]), AggregationMode.DSR, ACFG)
    s.save(tmp_path / "state_00")
    back = DsrState.load(tmp_path / "state_00")
    np.testing.assert_allclose(back.masks.probs, s.masks.probs, atol=1e-7)
    assert back.identities == s.identities and back.step == s.step
