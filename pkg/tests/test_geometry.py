import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rayalign.errors import DegenerateConfiguration, ZeroVector
from rayalign.geometry import (Pose, SimilarityTransform, axis_angle, compose, direction_angle, exp_so3,
                               from_quaternion, geodesic_angle, is_rotation, log_so3, random_rotation,
                               relative_from_c2w, relative_pose, to_quaternion, umeyama_align)

R90Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
R180X = np.diag([1.0, -1.0, -1.0])

vec3 = st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3).map(np.array)


def random_pose(rng, scale=2.0):
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))


def quat_angle(R1, R2):
    """Oracle: angle of the quaternion difference, 2 atan2(|v|, |w|)."""
    q1, q2 = to_quaternion(R1), to_quaternion(R2)
    w1, v1 = q1[0], q1[1:]
    w2, v2 = q2[0], q2[1:]
    # q1^-1 * q2
    w = w1 * w2 + v1 @ v2
    v = w1 * v2 - w2 * v1 - np.cross(v1, v2)
    return 2.0 * math.atan2(np.linalg.norm(v), abs(w))


def test_compose_examples():
    I = Pose.identity()
    assert compose(I, I).allclose(I)
    c = compose(Pose(R90Z, np.zeros(3)), Pose(np.eye(3), np.array([1.0, 0, 0])))
    np.testing.assert_allclose(c.t, [0, 1, 0], atol=1e-12)


def test_compose_inverse_is_identity(rng):
    for _ in range(100):
        p = random_pose(rng)
        assert compose(p, p.inverse()).allclose(Pose.identity(), atol=1e-9)
        assert compose(p.inverse(), p).allclose(Pose.identity(), atol=1e-9)


def test_compose_applies_right_first_and_is_associative(rng):
    a, b, c = (random_pose(rng) for _ in range(3))
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(compose(a, b).apply(x), a.apply(b.apply(x)), atol=1e-12)
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), atol=1e-9)
    assert (a @ b).allclose(compose(a, b))


def test_relative_pose_examples():
    p = Pose(R90Z, np.array([1.0, 2.0, 3.0]))
    assert relative_pose(p, p).allclose(Pose.identity())
    r = relative_pose(Pose.identity(), Pose(np.eye(3), np.array([0.0, 0, 1])))
    assert r.allclose(Pose(np.eye(3), np.array([0.0, 0, 1])))


def test_relative_pose_formula_maps_extrinsic_frames(rng):
    # the formula R_j R_i^T, t_j - R t_i transports camera-i coordinates to
    # camera-j coordinates when the poses are world-to-camera
    for _ in range(50):
        w2c_i, w2c_j = random_pose(rng), random_pose(rng)
        X = rng.normal(size=(4, 3))
        rel = relative_pose(w2c_i, w2c_j)
        np.testing.assert_allclose(rel.apply(w2c_i.apply(X)), w2c_j.apply(X), atol=1e-9)


def test_relative_from_c2w_matches_world_computation(rng):
    for _ in range(50):
        c2w_i, c2w_j = random_pose(rng), random_pose(rng)
        X = rng.normal(size=(4, 3))
        in_i = c2w_i.inverse().apply(X)
        in_j = c2w_j.inverse().apply(X)
        np.testing.assert_allclose(relative_from_c2w(c2w_i, c2w_j).apply(in_i), in_j, atol=1e-9)


def test_geodesic_examples():
    assert geodesic_angle(np.eye(3), np.eye(3)) == 0.0
    assert geodesic_angle(R90Z, np.eye(3)) == pytest.approx(math.pi / 2, abs=1e-12)
    a = geodesic_angle(R180X, np.eye(3))
    assert not math.isnan(a) and a == pytest.approx(math.pi, abs=1e-12)


def test_geodesic_clamps_roundoff():
    # trace slightly above 3 from rounding must not produce NaN
    R = np.eye(3) * (1 + 1e-15)
    assert geodesic_angle(R, np.eye(3)) == 0.0


def test_geodesic_symmetric_triangle_and_quaternion_oracle(rng):
    for _ in range(1000):
        A, B, C = (random_rotation(rng) for _ in range(3))
        ab, ba = geodesic_angle(A, B), geodesic_angle(B, A)
        assert 0.0 <= ab <= math.pi
        assert ab == pytest.approx(ba, abs=1e-12)
        assert geodesic_angle(A, C) <= ab + geodesic_angle(B, C) + 1e-7
        assert abs(ab - quat_angle(A, B)) < 1e-9


def test_direction_angle_examples():
    assert direction_angle([1, 0, 0], [1, 0, 0]) == 0.0
    assert direction_angle([1, 0, 0], [0, 1, 0]) == pytest.approx(math.pi / 2)
    assert direction_angle([1, 0, 0], [-2, 0, 0]) == pytest.approx(math.pi)
    with pytest.raises(ZeroVector):
        direction_angle([0, 0, 0], [1, 0, 0])
    with pytest.raises(ZeroVector):
        direction_angle([1, 0, 0], [1e-13, 0, 0])


@given(vec3, st.floats(-math.pi, math.pi))
def test_axis_angle_gives_rotation(axis, angle):
    if np.linalg.norm(axis) < 1e-3:
        return
    R = axis_angle(axis, angle)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) < 1e-9
    assert geodesic_angle(R, np.eye(3)) == pytest.approx(abs(angle), abs=1e-7)


def test_quaternion_round_trip(rng):
    for _ in range(200):
        R = random_rotation(rng)
        assert is_rotation(R)
        np.testing.assert_allclose(from_quaternion(to_quaternion(R)), R, atol=1e-12)
        assert to_quaternion(R)[0] >= 0


def test_exp_log_round_trip(rng):
    for _ in range(200):
        w = rng.normal(size=3)
        w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
        np.testing.assert_allclose(log_so3(exp_so3(w)), w, atol=1e-9)
    np.testing.assert_allclose(exp_so3(np.zeros(3)), np.eye(3))


def test_from_matrix_validates():
    M = np.eye(4)
    M[:3, :3] = R90Z
    M[:3, 3] = [1, 2, 3]
    assert Pose.from_matrix(M).allclose(Pose(R90Z, np.array([1.0, 2, 3])))
    np.testing.assert_array_equal(Pose.from_matrix(M).matrix(), M)
    bad = np.eye(4)
    bad[2, 2] = -1.0
    with pytest.raises(ValueError):
        Pose.from_matrix(bad)
    bad = np.eye(4)
    bad[3, 0] = 1.0
    with pytest.raises(ValueError):
        Pose.from_matrix(bad)


def test_umeyama_examples():
    src = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    s = umeyama_align(src, src)
    assert s.scale == pytest.approx(1.0)
    np.testing.assert_allclose(s.R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(s.t, 0, atol=1e-12)

    tri = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0]])
    dst = 2.0 * tri @ R90Z.T + [1, 2, 3]
    s = umeyama_align(tri, dst)
    assert s.scale == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(s.R, R90Z, atol=1e-9)
    np.testing.assert_allclose(s.t, [1, 2, 3], atol=1e-9)


def test_umeyama_recovers_random_similarity(rng):
    for _ in range(50):
        src = rng.normal(size=(10, 3))
        R, t, k = random_rotation(rng), rng.normal(size=3), rng.uniform(0.1, 5)
        dst = SimilarityTransform(k, R, t).apply(src)
        s = umeyama_align(src, dst)
        assert s.scale == pytest.approx(k, rel=1e-9)
        np.testing.assert_allclose(s.R, R, atol=1e-9)
        rmse = np.sqrt(np.mean(np.sum((s.apply(src) - dst) ** 2, 1)))
        assert rmse < 1e-9


def test_umeyama_rigid_recovers_pose(rng):
    for _ in range(50):
        src = rng.normal(size=(6, 3))
        a = random_pose(rng)
        s = umeyama_align(src, a.apply(src), with_scale=False)
        assert s.scale == 1.0
        np.testing.assert_allclose(s.R, a.R, atol=1e-9)
        np.testing.assert_allclose(s.t, a.t, atol=1e-9)


def test_umeyama_reflection_guard(rng):
    src = rng.normal(size=(8, 3))
    dst = src * [1, 1, -1]  # a mirror image: best proper rotation, never det -1
    s = umeyama_align(src, dst)
    assert np.linalg.det(s.R) == pytest.approx(1.0)


@pytest.mark.parametrize("pts", [
    [[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]],
    [[1, 2, 3]] * 4,
    [[0, 0, 0], [1, 0, 0]],
])
def test_umeyama_degenerate(pts):
    pts = np.array(pts, dtype=float)
    with pytest.raises(DegenerateConfiguration):
        umeyama_align(pts, pts)
