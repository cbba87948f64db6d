import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nbvgrasp.geometry import (
    Aabb,
    Intrinsics,
    Pose,
    angle_between,
    look_at,
    matrix_to_quat,
    normalize,
    orthonormal_frame,
    quat_multiply,
    quat_to_matrix,
    ray_box_chord,
)

coord = st.floats(-2, 2, allow_nan=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)
unit = vec3.filter(lambda v: np.linalg.norm(v) > 1e-3).map(normalize)
quat = st.tuples(coord, coord, coord, coord).filter(lambda q: np.linalg.norm(q) > 1e-3).map(normalize)


@given(quat)
def test_quat_matrix_is_rotation(q):
    m = quat_to_matrix(q)
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(m), 1.0)


@given(quat)
def test_quat_roundtrip_up_to_sign(q):
    back = matrix_to_quat(quat_to_matrix(q))
    assert np.allclose(back, q, atol=1e-9) or np.allclose(back, -q, atol=1e-9)


@given(quat, quat)
def test_quat_multiply_matches_matrix_product(a, b):
    assert np.allclose(quat_to_matrix(quat_multiply(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


@given(quat, vec3, quat, vec3, vec3)
def test_pose_compose_and_inverse(qa, ta, qb, tb, p):
    a, b = Pose(qa, ta), Pose(qb, tb)
    p = p[None]
    assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)
    assert np.allclose(a.inverse().apply(a.apply(p)), p, atol=1e-12)
    assert np.allclose(a.as_matrix() @ a.inverse().as_matrix(), np.eye(4), atol=1e-12)


@given(unit)
def test_orthonormal_frame(d):
    a, e1, e2 = orthonormal_frame(d)
    m = np.stack([a, e1, e2])
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
    assert np.allclose(a, d)
    assert np.isclose(np.linalg.det(m), 1.0)


@given(vec3, unit)
def test_look_at_axis_points_at_target(eye, d):
    target = eye + 0.5 * d
    pose = look_at(eye, target)
    assert np.allclose(pose.rotation[:, 2], d, atol=1e-9)
    assert np.allclose(pose.trans, eye)
    cam = pose.inverse().apply(target[None])[0]
    assert np.allclose(cam[:2], 0, atol=1e-9) and cam[2] > 0


def test_angle_between_known_values():
    assert angle_between([1, 0, 0], [0, 1, 0]) == pytest.approx(np.pi / 2)
    assert angle_between([1, 0, 0], [1, 0, 0]) == pytest.approx(0)
    assert angle_between([1, 0, 0], [-2, 0, 0]) == pytest.approx(np.pi)


def test_intrinsics_principal_ray():
    K = Intrinsics.from_fov(80, 60, 60)
    rays = K.pixel_rays()
    assert rays.shape == (60, 80, 3)
    assert np.allclose(rays[..., 2], 1)
    # horizontal field of view spans +-30 degrees at the image border
    assert np.degrees(np.arctan((0 - K.cx) / K.fx)) == pytest.approx(-30, abs=1.0)


@given(vec3, unit)
def test_ray_box_chord_endpoints_on_box(o, d):
    lo, hi = np.zeros(3), np.ones(3)
    c = ray_box_chord(o, d, lo, hi)
    if c is None:
        return
    for t in c:
        p = o + t * d
        assert np.all(p >= lo - 1e-9) and np.all(p <= hi + 1e-9)
    mid = o + 0.5 * (c[0] + c[1]) * d
    assert Aabb(lo, hi).contains(mid, 1e-9)


def test_aabb_basics():
    a = Aabb([0, 0, 0], [1, 2, 3])
    assert np.allclose(a.center, [0.5, 1, 1.5])
    assert np.allclose(a.extent, [1, 2, 3])
    assert a.intersects(Aabb([0.5, 0.5, 0.5], [4, 4, 4]))
    assert not a.intersects(Aabb([1.5, 0, 0], [2, 1, 1]))
