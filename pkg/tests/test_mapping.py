import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stereo_evio import representations as rep
from stereo_evio import sim
from stereo_evio.core import CameraIntrinsics, Pose, StereoRig, so3_exp
from stereo_evio.mapping import (STATIC, TEMPORAL, DepthPoint, LocalDepthMap, StudentTModel,
                                 bilinear, disparity_to_inverse_depth, fuse_depth, fuse_into_map,
                                 map_from_points, merge_maps, propagate_map, static_stereo_match,
                                 temporal_stereo_match, zncc_fast_scan, zncc_naive,
                                 zncc_naive_scan)


# ---------------------------------------------------------------- ZNCC

def test_zncc_self_and_anti_correlation(rng):
    p = rng.random((15, 15))
    assert zncc_naive(p, p).value == pytest.approx(1.0, abs=1e-12)
    assert zncc_naive(p, 3.0 - p).value == pytest.approx(-1.0, abs=1e-12)


@given(st.floats(-10, 10).filter(lambda a: abs(a) > 1e-3), st.floats(-100, 100),
       st.integers(0, 2**31))
def test_zncc_affine_invariance(a, b, seed):
    p = np.random.default_rng(seed).random((7, 9))
    assert zncc_naive(p, a * p + b).value == pytest.approx(np.sign(a), abs=1e-9)


def test_zncc_flat_patch_is_degenerate(rng):
    s = zncc_naive(rng.random((5, 5)), np.full((5, 5), 0.3))
    assert s.value == 0.0 and s.degenerate


def test_zncc_is_pearson_correlation(rng):
    a, b = rng.random((6, 6)), rng.random((6, 6))
    assert zncc_naive(a, b).value == pytest.approx(np.corrcoef(a.ravel(), b.ravel())[0, 1], abs=1e-12)


def test_zncc_rejects_bad_shapes():
    with pytest.raises(ValueError):
        zncc_naive(np.ones((3, 3)), np.ones((3, 4)))
    with pytest.raises(ValueError):
        zncc_naive(np.ones((1, 1)), np.ones((1, 1)))


@given(st.integers(0, 2**31), st.integers(1, 9), st.integers(1, 9), st.integers(0, 12),
       st.integers(0, 30))
def test_fast_scan_matches_naive(seed, m, n, d0, k):
    if m * n < 2:
        return
    rng = np.random.default_rng(seed)
    patch = rng.random((m, n))
    strip = rng.random((m, d0 + k + n))
    fast = zncc_fast_scan(patch, strip, (d0, d0 + k))
    naive = zncc_naive_scan(patch, strip, (d0, d0 + k))
    np.testing.assert_allclose(fast.values, naive.values, atol=1e-9, rtol=0)
    np.testing.assert_array_equal(fast.degenerate, naive.degenerate)


def test_fast_scan_single_disparity(rng):
    patch, strip = rng.random((15, 15)), rng.random((15, 40))
    fast = zncc_fast_scan(patch, strip, (7, 7))
    assert len(fast.values) == 1
    assert fast.values[0] == pytest.approx(zncc_naive(patch, strip[:, 7:22]).value, abs=1e-12)


def test_fast_scan_flat_windows(rng):
    strip = np.zeros((5, 20))
    strip[:, 12:] = rng.random((5, 8))
    scan = zncc_fast_scan(rng.random((5, 5)), strip, (0, 15))
    assert scan.degenerate[0] and not scan.degenerate[-1]
    assert scan.values[0] == 0.0


def test_fast_scan_rejects_narrow_strip(rng):
    with pytest.raises(ValueError):
        zncc_fast_scan(rng.random((5, 5)), rng.random((5, 10)), (0, 10))


# ---------------------------------------------------------------- static stereo

def textured(rng, h=60, w=160):
    from scipy import ndimage
    return ndimage.gaussian_filter(rng.random((h, w)), 1.5)


def test_static_match_identical_images(rng):
    img = textured(rng)
    m = static_stereo_match((100, 30), img, img, d_range=(0, 50))
    assert m.disparity == pytest.approx(0.0, abs=1e-9)
    assert m.score == pytest.approx(1.0)


def test_static_match_shift_of_seven(rng):
    left = textured(rng)
    right = np.roll(left, -7, axis=1)
    m = static_stereo_match((100, 30), left, right, d_range=(1, 60), subpixel=False)
    assert m.disparity == 7.0
    assert m.score == pytest.approx(1.0)
    # the parabola through the peak and its neighbours stays within a tenth of a pixel
    m = static_stereo_match((100, 30), left, right, d_range=(1, 60))
    assert m.disparity == pytest.approx(7.0, abs=0.1)


def test_static_match_rejects_horizontal_edge():
    yy = np.arange(60)[:, None] * np.ones((1, 160))
    img = 1.0 / (1.0 + np.exp(-(yy - 30.0)))
    assert static_stereo_match((100, 30), img, img, d_range=(1, 60)) is None


def test_static_match_rejects_flat_and_border(rng):
    flat = np.full((60, 160), 0.5)
    assert static_stereo_match((100, 30), flat, flat) is None
    img = textured(rng)
    assert static_stereo_match((3, 30), img, img) is None


def test_disparity_to_inverse_depth():
    cam = CameraIntrinsics(500, 500, 320, 240, 640, 480)
    rig = StereoRig.symmetric(cam, 0.5)
    rho, var = disparity_to_inverse_depth(250.0, rig)
    assert rho == pytest.approx(1.0)
    rho, var = disparity_to_inverse_depth(25.0, rig)
    assert rho == pytest.approx(0.1)
    assert var == pytest.approx((0.5 / 250.0) ** 2)
    with pytest.raises(ValueError):
        disparity_to_inverse_depth(0.0, rig)


@pytest.fixture(scope="module")
def plane_views():
    """Time surfaces and AA maps of a textured fronto-parallel plane at 2, 5 and 10 m."""
    rig = sim.default_rig()
    out = {}
    for Z in (2.0, 5.0, 10.0):
        scene = sim.fronto_parallel_scene(Z, texture="noise", period=0.25 * Z)
        traj = sim.TrajectoryModel(0.05, v0=[0, 0.15 * Z, 0.1 * Z])
        L, R = sim.gen_events(scene, traj, rig, t_span=(0, 40_000))
        ts_l = rep.build_time_surface(rep.last_event_times(L), 40_000)
        ts_r = rep.build_time_surface(rep.last_event_times(R), 40_000)
        aa = rep.build_aa(L.window(20_000, 40_000), t_ref=40_000)
        out[Z] = (rig, ts_l, ts_r, aa)
    return out


@pytest.mark.parametrize("Z", [2.0, 5.0, 10.0])
def test_static_stereo_accuracy_on_plane(plane_views, Z):
    rig, ts_l, ts_r, aa = plane_views[Z]
    pts = rep.sample_contour_points(aa, 800, rng=0)
    static_pts, _ = rep.split_by_gradient(pts, ts_l)
    rel = []
    for p in static_pts:
        m = static_stereo_match(p, ts_l.values, ts_r.values)
        if m is not None and m.disparity > 0:
            rel.append(abs(disparity_to_inverse_depth(m.disparity, rig)[0] * Z - 1.0))
    assert len(rel) > 100
    assert np.mean(rel) < 0.05


# ---------------------------------------------------------------- temporal stereo

def test_temporal_zero_translation_rejected(rng):
    cam = CameraIntrinsics(200, 200, 80, 60, 160, 120)
    img = textured(rng, 120, 160)
    assert temporal_stereo_match((80, 30), img, img, Pose(), (0.1, 1.0), cam) is None


def test_temporal_baseline_parallel_motion_rejected(rng):
    cam = CameraIntrinsics(200, 200, 80, 60, 160, 120)
    img = textured(rng, 120, 160)
    T = Pose(p=[-0.1, 0.0, 0.0])
    assert temporal_stereo_match((80, 30), img, img, T, (0.1, 1.0), cam) is None


def test_temporal_vertical_motion_recovers_shift(rng):
    # camera moves down by 0.1 m: a point at depth 2 m moves 10 px up in the image
    cam = CameraIntrinsics(200, 200, 80, 60, 160, 120)
    prev = textured(rng, 120, 160)
    curr = np.roll(prev, -10, axis=0)
    T_curr_prev = Pose(p=[0.0, -0.1, 0.0])
    m = temporal_stereo_match((80, 50), curr, prev, T_curr_prev, (0.1, 1.0), cam)
    assert m is not None and m.point.source == TEMPORAL
    assert m.point.rho == pytest.approx(0.5, rel=0.01)
    assert m.epipolar_length == pytest.approx(18.0)


@pytest.fixture(scope="module")
def bar_sequence():
    """Forward motion toward a horizontal bar 5 m ahead of the start position."""
    rig = sim.default_rig()
    u, v = np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])
    scene = sim.SceneModel([
        sim.Plane([20.0, 0, 0], u, v, texture="flat", base=0.3, contrast=0.0),
        sim.Plane([5.0, 0, 1.5], u, v, half_u=3.0, half_v=0.2, texture="flat", base=0.8,
                  contrast=0.0)])
    traj = sim.TrajectoryModel(0.3, v0=[2.0, 0, 0])
    L, _ = sim.gen_events(scene, traj, rig, t_span=(0, 260_000))
    return rig, traj, L


def test_temporal_forward_motion_over_bar(bar_sequence):
    rig, traj, L = bar_sequence
    t_prev, t_curr = 110_000, 260_000
    aa_prev = rep.build_aa(L.window(t_prev - 50_000, t_prev), t_ref=t_prev)
    aa_curr = rep.build_aa(L.window(t_curr - 50_000, t_curr), t_ref=t_curr)
    T_curr_prev = traj.pose_us(t_curr).inverse() @ traj.pose_us(t_prev)
    ts = rep.build_time_surface(rep.last_event_times(L), t_curr)
    pts = rep.sample_contour_points(aa_curr, 500, rng=0)
    _, temporal_pts = rep.split_by_gradient(pts, ts)
    rho_true = 1.0 / (5.0 - traj.pose_us(t_curr).p[0])
    rel = []
    for p in temporal_pts:
        m = temporal_stereo_match(p, aa_curr.counts.astype(float), aa_prev.counts.astype(float),
                                  T_curr_prev, (0.05, 1.0), rig.left)
        if m is not None:
            rel.append(abs(m.point.rho / rho_true - 1.0))
    assert len(rel) > 0.8 * len(temporal_pts) > 100
    assert np.median(rel) < 0.05


# ---------------------------------------------------------------- fusion and maps

def test_student_t_model_validation():
    with pytest.raises(ValueError):
        StudentTModel(scale=0.0)


def test_depth_point_validation():
    with pytest.raises(ValueError):
        DepthPoint(0, 0, -1.0, 1.0)
    with pytest.raises(ValueError):
        DepthPoint(0, 0, 1.0, 0.0)


def test_fuse_equal_estimates_halves_variance():
    a = DepthPoint(3, 4, 0.2, 0.01)
    f = fuse_depth(a, a)
    assert f.rho == pytest.approx(0.2) and f.variance == pytest.approx(0.005)


def test_fuse_incompatible_keeps_lower_variance():
    # the gate is 2 sqrt(var_a + var_b): a gap of 0.2 with variances 0.01 each is compatible
    a = DepthPoint(3, 4, 0.10, 0.01)
    b = DepthPoint(3, 4, 0.30, 0.01)
    assert fuse_depth(a, b).rho == pytest.approx(0.2)
    a, b = DepthPoint(3, 4, 0.10, 0.004), DepthPoint(3, 4, 0.30, 0.005)
    assert fuse_depth(a, b) == a
    assert fuse_depth(b, a) == a


def test_fuse_with_uninformative_point():
    a = DepthPoint(3, 4, 0.5, 1e12)
    b = DepthPoint(3, 4, 0.2, 1e-3)
    f = fuse_depth(a, b)
    assert f.rho == pytest.approx(b.rho, rel=1e-9)
    assert f.variance == pytest.approx(b.variance, rel=1e-9)


@given(st.floats(0.05, 2.0), st.floats(1e-4, 1e-1), st.floats(0.05, 2.0), st.floats(1e-4, 1e-1))
def test_fuse_commutative(r1, v1, r2, v2):
    a, b = DepthPoint(1, 1, r1, v1), DepthPoint(1, 1, r2, v2)
    f, g = fuse_depth(a, b), fuse_depth(b, a)
    compatible = abs(r1 - r2) <= 2 * np.sqrt(v1 + v2)
    if compatible:
        assert f.rho == pytest.approx(g.rho, abs=1e-12)
        assert f.variance == pytest.approx(g.variance, abs=1e-12)


def test_map_rejects_duplicate_pixels():
    with pytest.raises(ValueError):
        LocalDepthMap(Pose(), 10, 10, [DepthPoint(1, 1, 0.5, 0.1), DepthPoint(1.2, 0.9, 0.4, 0.1)])


def test_map_from_points_fuses_collisions():
    m = map_from_points(Pose(), 10, 10, [DepthPoint(1, 1, 0.5, 0.1), DepthPoint(1.2, 0.9, 0.5, 0.1),
                                         DepthPoint(5, 5, 0.3, 0.1)])
    assert len(m) == 2
    assert sorted(m.var) == pytest.approx([0.05, 0.1])
    img = m.inverse_depth_image()
    assert img[5, 5] == pytest.approx(0.3) and np.count_nonzero(img) == 2


def test_merge_maps_union_and_static_priority():
    s = LocalDepthMap(Pose(), 10, 10, [DepthPoint(1, 1, 0.5, 0.1, STATIC), DepthPoint(2, 2, 0.5, 0.1)])
    t = LocalDepthMap(Pose(), 10, 10, [DepthPoint(3, 3, 0.2, 0.1, TEMPORAL),
                                       DepthPoint(1, 1, 0.9, 0.01, TEMPORAL)])
    m = merge_maps(s, t)
    assert len(m) == 3
    k = dict(zip(m.keys(), m.rho))
    assert k[11] == 0.5 and k[33] == 0.2
    empty = LocalDepthMap(Pose(), 10, 10)
    e = merge_maps(s, empty)
    np.testing.assert_array_equal(e.uv, s.uv)
    np.testing.assert_array_equal(e.rho, s.rho)


def test_fuse_into_map_keeps_one_point_per_pixel():
    m = LocalDepthMap(Pose(), 10, 10, [DepthPoint(1, 1, 0.5, 0.1)])
    m2 = fuse_into_map(m, [DepthPoint(1, 1, 0.5, 0.1), DepthPoint(4, 1, 0.5, 0.1)])
    assert len(m2) == 2 and min(m2.var) == pytest.approx(0.05)


def grid_map(cam, depth=2.0, step=20):
    ys, xs = np.mgrid[step:cam.height - step:step, step:cam.width - step:step]
    uv = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
    n = len(uv)
    return LocalDepthMap.from_arrays(Pose(), cam.width, cam.height, uv, np.full(n, 1 / depth),
                                     np.full(n, 1e-3), np.zeros(n), np.zeros(n))


def test_propagate_identity():
    cam = CameraIntrinsics(200, 200, 99.5, 79.5, 200, 160)
    m = grid_map(cam)
    p = propagate_map(m, Pose(), cam)
    np.testing.assert_allclose(p.uv, m.uv, atol=1e-9)
    np.testing.assert_allclose(p.rho, m.rho)


def test_propagate_forward_translation_reduces_depth():
    cam = CameraIntrinsics(200, 200, 99.5, 79.5, 200, 160)
    m = grid_map(cam, depth=4.0, step=10)
    # moving the camera 1 m forward maps old coordinates to new by z - 1
    p = propagate_map(m, Pose(p=[0, 0, -1.0]), cam)
    np.testing.assert_allclose(1.0 / p.rho, 3.0)
    assert len(p) < len(m)   # magnified points leave the image


def test_propagate_roll_rotates_pixels():
    cam = CameraIntrinsics(200, 200, 99.5, 99.5, 200, 200)
    m = grid_map(cam, step=10)
    R = so3_exp([0, 0, np.pi / 2])
    p = propagate_map(m, Pose.from_matrix(R), cam)
    c = np.array([cam.cx, cam.cy])
    expected = (m.uv - c) @ np.array([[0, 1], [-1, 0]]) + c
    got = {tuple(np.rint(x).astype(int)) for x in p.uv}
    want = {tuple(np.rint(x).astype(int)) for x in expected if cam.in_bounds(x, -0.49)}
    assert got == want
    assert len(p) == len(want) <= len(m)


def test_propagate_drops_points_behind_camera():
    cam = CameraIntrinsics(200, 200, 99.5, 79.5, 200, 160)
    m = grid_map(cam, depth=2.0)
    p = propagate_map(m, Pose(p=[0, 0, -3.0]), cam)
    assert len(p) == 0


def test_bilinear(rng):
    img = rng.random((5, 6))
    assert bilinear(img, 2.0, 3.0) == pytest.approx(img[3, 2])
    assert bilinear(img, 2.5, 3.0) == pytest.approx(0.5 * (img[3, 2] + img[3, 3]))
    assert bilinear(img, 5.0, 4.0) == pytest.approx(img[4, 5])
    assert bilinear(img, -0.1, 0.0, fill=7.0) == 7.0
