import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stereo_evio.core import (CameraIntrinsics, Event, EventStream, MotionParams, Pose, StereoRig,
                              cayley_rotate_jacobian, cayley_to_rotation, compose, inverse,
                              matrix_to_quat, quat_exp, quat_log, quat_multiply, quat_to_matrix,
                              rotation_angle, rotation_to_cayley, skew, so3_exp, so3_log)

from conftest import random_pose

vec3 = arrays(np.float64, 3, elements=st.floats(-5, 5, allow_nan=False))


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def test_skew_is_cross_product():
    a, b = np.array([1.0, -2, 3]), np.array([0.5, 4, -1])
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))


def test_cayley_zero_is_identity():
    np.testing.assert_array_equal(cayley_to_rotation(np.zeros(3)), np.eye(3))


def test_cayley_unit_z_is_quarter_turn():
    # quaternion (1, c)/|(1, c)| has angle 2 atan(1) = 90 degrees
    np.testing.assert_allclose(cayley_to_rotation([0, 0, 1.0]), rot_z(np.pi / 2), atol=1e-15)


def test_cayley_matches_inverse_product_form(rng):
    for _ in range(20):
        c = rng.uniform(-3, 3, 3)
        K = skew(c)
        R = np.linalg.solve(np.eye(3) - K, np.eye(3) + K)
        np.testing.assert_allclose(cayley_to_rotation(c), R, atol=1e-12)


@given(vec3)
def test_cayley_is_proper_rotation(c):
    R = cayley_to_rotation(c)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1) < 1e-9


@given(vec3)
def test_cayley_round_trip(c):
    if np.linalg.norm(c) >= 5:
        return
    np.testing.assert_allclose(rotation_to_cayley(cayley_to_rotation(c)), c, atol=1e-10)


def test_cayley_undefined_at_half_turn():
    with pytest.raises(ValueError):
        rotation_to_cayley(rot_z(np.pi))


def test_cayley_jacobian_matches_finite_differences(rng):
    X = rng.standard_normal((4, 3))
    c = rng.uniform(-1, 1, 3)
    J = cayley_rotate_jacobian(c, X)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = ((cayley_to_rotation(c + e) @ X.T) - (cayley_to_rotation(c - e) @ X.T)).T / (2 * h)
        np.testing.assert_allclose(J[:, :, k], fd, atol=1e-8)


def test_quaternion_matrix_round_trip(rng):
    for _ in range(50):
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        q2 = matrix_to_quat(quat_to_matrix(q))
        assert min(np.linalg.norm(q - q2), np.linalg.norm(q + q2)) < 1e-12


def test_quaternion_product_is_matrix_product(rng):
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    np.testing.assert_allclose(quat_to_matrix(quat_multiply(a, b)),
                               quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


def test_exp_log_round_trip(rng):
    for _ in range(20):
        phi = rng.uniform(-1.5, 1.5, 3)
        np.testing.assert_allclose(quat_log(quat_exp(phi)), phi, atol=1e-12)
        np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, atol=1e-10)
    assert abs(rotation_angle(rot_z(3.0)) - 3.0) < 1e-9
    np.testing.assert_allclose(quat_log(quat_exp(np.zeros(3))), np.zeros(3))


def test_compose_identity_and_inverse(rng):
    P = random_pose(rng)
    Q = compose(Pose.identity(), P)
    np.testing.assert_allclose(Q.q, P.q)
    np.testing.assert_allclose(Q.p, P.p)
    I = compose(P, inverse(P))
    np.testing.assert_allclose(I.R, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(I.p, np.zeros(3), atol=1e-10)


def test_compose_two_quarter_turns():
    P = Pose.from_matrix(rot_z(np.pi / 2), [1.0, 0, 0])
    Q = compose(P, P)
    np.testing.assert_allclose(Q.R, rot_z(np.pi / 2) @ rot_z(np.pi / 2), atol=1e-12)
    np.testing.assert_allclose(Q.matrix(), P.matrix() @ P.matrix(), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_compose_associative_and_normalised(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_pose(rng) for _ in range(3))
    left, right = (a @ b) @ c, a @ (b @ c)
    np.testing.assert_allclose(left.matrix(), right.matrix(), atol=1e-9)
    assert abs(np.linalg.norm(left.q) - 1) < 1e-9


def test_pose_apply_matches_matrix(rng):
    P = random_pose(rng)
    X = rng.standard_normal((5, 3))
    Xh = np.hstack([X, np.ones((5, 1))])
    np.testing.assert_allclose(P.apply(X), (P.matrix() @ Xh.T).T[:, :3], atol=1e-12)


def test_pose_rejects_non_finite():
    with pytest.raises(ValueError):
        Pose(p=[np.nan, 0, 0])


def test_motion_params_round_trip(rng):
    P = Pose.from_matrix(so3_exp([0.1, -0.2, 0.3]), [1, 2, 3])
    theta = MotionParams.from_pose(P)
    Q = Pose.from_motion(theta)
    np.testing.assert_allclose(Q.matrix(), P.matrix(), atol=1e-12)
    np.testing.assert_allclose(MotionParams.from_vector(theta.vector()).vector(), theta.vector())


def test_camera_validation_and_projection():
    with pytest.raises(ValueError):
        CameraIntrinsics(-1, 1, 5, 5, 10, 10)
    with pytest.raises(ValueError):
        CameraIntrinsics(1, 1, 20, 5, 10, 10)
    cam = CameraIntrinsics(500, 500, 320, 240, 640, 480)
    X = cam.backproject([[100.0, 50.0]], [2.0])
    np.testing.assert_allclose(cam.project(X), [[100.0, 50.0]])
    assert cam.in_bounds([[0.0, 0.0]])[0] and not cam.in_bounds([[640.0, 0.0]])[0]


def test_camera_from_fov():
    cam = CameraIntrinsics.from_fov(640, 480, 90.0)
    assert cam.fx == pytest.approx(320.0)
    assert cam.cx == pytest.approx(319.5)


def test_stereo_rig():
    cam = CameraIntrinsics(500, 500, 320, 240, 640, 480)
    rig = StereoRig.symmetric(cam, 0.1)
    np.testing.assert_allclose(rig.T_right_left.p, [-0.1, 0, 0])
    # a point straight ahead of the left camera lies to the left in the right camera
    X = np.array([0.0, 0.0, 5.0])
    uv_r = cam.project(rig.T_right_left.apply(X))
    assert uv_r[0] == pytest.approx(320 - 500 * 0.1 / 5)
    with pytest.raises(ValueError):
        StereoRig.symmetric(cam, 0.0)


def test_event_validation():
    with pytest.raises(ValueError):
        Event(1, 1, 0, 0)
    with pytest.raises(ValueError):
        EventStream([2, 1], [0, 0], [0, 0], [1, 1], 4, 4)
    with pytest.raises(ValueError):
        EventStream([1], [4], [0], [1], 4, 4)


def test_event_stream_window_and_merge():
    a = EventStream([10, 30], [0, 1], [0, 1], [1, -1], 4, 4)
    b = EventStream([20], [2], [2], [1], 4, 4)
    m = EventStream.merge([a, b])
    np.testing.assert_array_equal(m.t, [10, 20, 30])
    np.testing.assert_array_equal(m.x, [0, 2, 1])
    w = m.window(10, 30)
    np.testing.assert_array_equal(w.t, [20, 30])
    assert m[1] == Event(2, 2, 20, 1)
    assert [e.t for e in m] == [10, 20, 30]
    assert len(EventStream.empty(4, 4)) == 0
    s = EventStream.from_events(list(m), 4, 4)
    np.testing.assert_array_equal(s.to_records()["t"], [10, 20, 30])
