import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsr.errors import ChannelMismatch, GridMismatch
from dsr.rigid import (
    SE3Transform,
    TransformSet,
    blended_flow,
    blended_points,
    euler_partials,
    euler_to_matrix,
    flow_jacobian,
    motion_loss,
)
from dsr.voxel import GridSpec, InstanceMaskVolume, VectorVolume

from conftest import SMALL, random_labels, random_masks

angles = st.tuples(*(st.floats(-np.pi, np.pi) for _ in range(3)))
vec3 = st.tuples(*(st.floats(-0.1, 0.1) for _ in range(3)))


@given(angles)
def test_rotation_is_orthonormal(e):
    R = euler_to_matrix(e)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1) < 1e-12


def test_intrinsic_xyz_order():
    # a pure yaw rotates x into y
    np.testing.assert_allclose(euler_to_matrix((0, 0, np.pi / 2)) @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    a, b, g = 0.3, -0.2, 0.7
    Rx = euler_to_matrix((a, 0, 0))
    Ry = euler_to_matrix((0, b, 0))
    Rz = euler_to_matrix((0, 0, g))
    np.testing.assert_allclose(euler_to_matrix((a, b, g)), Rx @ Ry @ Rz, atol=1e-15)


@given(angles)
def test_partials_match_central_differences(e):
    h = 1e-6
    for a, dR in enumerate(euler_partials(e)):
        ep = np.array(e, dtype=float)
        em = ep.copy()
        ep[a] += h
        em[a] -= h
        fd = (euler_to_matrix(ep) - euler_to_matrix(em)) / (2 * h)
        np.testing.assert_allclose(dR, fd, atol=1e-8)


def test_transform_validation():
    with pytest.raises(ValueError):
        SE3Transform((0, 0, np.nan))
    with pytest.raises(ValueError):
        TransformSet((SE3Transform(), SE3Transform(translation=(1, 0, 0))))
    with pytest.raises(ChannelMismatch):
        TransformSet.from_objects(3, {2: SE3Transform()})


def test_transform_roundtrip():
    ts = TransformSet.from_objects(3, {0: SE3Transform((0.1, 0.2, 0.3), (1, 2, 3))})
    assert TransformSet.from_list(ts.to_list()) == ts


def test_one_hot_masks_give_rigid_flow():
    rng = np.random.default_rng(1)
    lab = random_labels(rng, k=3)
    masks = InstanceMaskVolume.from_labels(SMALL, lab, 3)
    T = SE3Transform((0.0, 0.0, 0.2), (0.01, -0.02, 0.0))
    flow = blended_flow(masks, TransformSet.from_objects(3, {1: T})).values
    x = SMALL.centers()
    expect = T.apply(x) - x
    on = lab == 1
    np.testing.assert_allclose(flow[on], expect[on], atol=1e-15)
    assert np.all(flow[~on] == 0.0)


def test_identity_transforms_give_exact_zero_flow():
    masks = random_masks(np.random.default_rng(2))
    assert np.all(blended_flow(masks, TransformSet.identity(5)).values == 0.0)


@given(st.integers(0, 2**31 - 1))
def test_sparse_flow_equals_dense_blend(seed):
    rng = np.random.default_rng(seed)
    masks = random_masks(rng, sparsity=0.5)
    ts = TransformSet.from_objects(5, {c: SE3Transform(tuple(rng.normal(0, 0.3, 3)), tuple(rng.normal(0, 0.02, 3))) for c in range(2)})
    pts = SMALL.centers().reshape(-1, 3)
    dense = blended_points(masks.probs.reshape(5, -1), ts, pts).reshape(*SMALL.dims, 3)
    np.testing.assert_allclose(blended_flow(masks, ts).values, dense, rtol=0, atol=1e-15)


def test_blended_flow_checks():
    masks = random_masks(np.random.default_rng(3), k=3)
    with pytest.raises(ChannelMismatch):
        blended_flow(masks, TransformSet.identity(4))
    with pytest.raises(GridMismatch):
        blended_flow(masks, TransformSet.identity(3), GridSpec())


@given(st.integers(0, 2**31 - 1))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    k = 4
    m = rng.dirichlet(np.ones(k))
    x = rng.uniform(-0.25, 0.25, 3)
    params = rng.normal(0, 0.5, (k, 6))
    params[-1] = 0

    def flow(p):
        ts = TransformSet(tuple(SE3Transform(tuple(r[:3]), tuple(r[3:])) for r in p))
        return blended_points(m[:, None], ts, x[None])[0]

    ts = TransformSet(tuple(SE3Transform(tuple(r[:3]), tuple(r[3:])) for r in params))
    J = flow_jacobian(m, ts, x)
    h = 1e-6
    for i in range(k - 1):
        for a in range(6):
            pp, pm = params.copy(), params.copy()
            pp[i, a] += h
            pm[i, a] -= h
            fd = (flow(pp) - flow(pm)) / (2 * h)
            np.testing.assert_allclose(J[:, i, a], fd, atol=1e-8)


def test_motion_loss():
    z = VectorVolume.zeros(SMALL)
    one = VectorVolume(SMALL, np.full((*SMALL.dims, 3), 0.5))
    assert motion_loss(z, z) == 0.0
    assert motion_loss(z, one) == pytest.approx(0.25)
