"""Shared synthetic set-ups for the estimator tests."""
import numpy as np

from stereo_evio import representations as rep
from stereo_evio import sim
from stereo_evio.core import CameraIntrinsics, MotionParams
from stereo_evio.backend import WindowNode, WindowState
from stereo_evio.imu import ImuBias, ImuBuffer, predict_motion, preintegrate
from stereo_evio.tracking import AnalyticSurface, GridSurface, RegistrationProblem, track, warp

CAM = CameraIntrinsics(200, 200, 99.5, 79.5, 200, 160)


def consistent_window(rng, n_nodes=5, dt_us=50_000, bias=None):
    """A window whose poses and velocities follow exactly from its own pre-integrations.

    Random IMU samples are pre-integrated at ``bias``; every later node is
    produced by :func:`predict_motion`, so the true state has zero residual
    up to rounding.
    """
    bias = bias if bias is not None else ImuBias(0.05 * rng.standard_normal(3),
                                                 0.01 * rng.standard_normal(3))
    pose = sim.TrajectoryModel(1.0).pose(0.0)
    v = rng.standard_normal(3)
    nodes = [WindowNode(pose, 0, v, bias)]
    preints = []
    for k in range(1, n_nodes):
        t = np.arange((k - 1) * dt_us, k * dt_us + 1, 1000, dtype=np.int64)
        gyro = 0.5 * rng.standard_normal(3) + 0.05 * rng.standard_normal((len(t), 3))
        accel = np.array([0, 0, 9.81]) + rng.standard_normal(3) + 0.1 * rng.standard_normal((len(t), 3))
        pre = preintegrate(ImuBuffer(t, gyro, accel), bias)
        pose, v = predict_motion(pose, v, pre)
        nodes.append(WindowNode(pose, k * dt_us, v, bias))
        preints.append(pre)
    return WindowState(nodes, preints)


def simulated_window(traj, stream, t_nodes, linearization=ImuBias()):
    """Ground-truth window over ``traj`` with pre-integrations of ``stream`` at ``linearization``."""
    nodes = [WindowNode(traj.pose_us(t), int(t), traj.velocity(t / 1e6), stream.true_bias(t))
             for t in t_nodes]
    preints = [preintegrate(stream.buffer.between(a, b), linearization)
               for a, b in zip(t_nodes, t_nodes[1:])]
    return WindowState(nodes, preints)


def blob_surface(targets, sigma=3.0, cam=CAM):
    """Smooth negative surface ``prod_k (1 - g_k)`` with a Gaussian valley at each target.

    Values stay in [0, 1] and are exactly 0 at every target, so the targets
    are the least-squares optimum.
    """
    targets = np.asarray(targets, float)

    def terms(u, v):
        du = np.asarray(u, float)[..., None] - targets[:, 0]
        dv = np.asarray(v, float)[..., None] - targets[:, 1]
        return du, dv, np.exp(-(du * du + dv * dv) / (2 * sigma**2))

    def func(u, v):
        return np.prod(1.0 - terms(u, v)[2], axis=-1)

    def grad(u, v):
        du, dv, e = terms(u, v)
        one = 1.0 - e
        ones = np.ones(one.shape[:-1] + (1,))
        before = np.cumprod(np.concatenate([ones, one[..., :-1]], axis=-1), axis=-1)
        after = np.cumprod(np.concatenate([ones, one[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
        others = before * after
        # d(1 - g_k)/du = g_k du / sigma^2
        return ((others * e * du).sum(axis=-1) / sigma**2,
                (others * e * dv).sum(axis=-1) / sigma**2)

    return AnalyticSurface(func, grad, cam.width, cam.height)


def scattered_problem(rng, n=80, theta_true=None, sigma=3.0):
    uv = np.column_stack([rng.uniform(20, 180, n), rng.uniform(20, 140, n)])
    rho = 1.0 / rng.uniform(2.0, 4.0, n)
    theta_true = MotionParams() if theta_true is None else theta_true
    targets, _ = warp(uv, rho, theta_true, CAM)
    return RegistrationProblem(uv, rho, blob_surface(targets, sigma), CAM)


def edge_time_surface(cols, width=200, height=160, speed_px_per_ms=0.5, t_ref=100_000):
    """Vertical edges moving right: each has just reached column ``c``."""
    last = np.full((height, width), -1, dtype=np.int64)
    x = np.arange(width)
    for c in cols:
        passed = (x <= c) & (x > c - 40)
        t = np.where(passed, t_ref - ((c - x) / speed_px_per_ms * 1000).astype(np.int64), -1)
        last = np.maximum(last, t[None, :])
    return rep.build_time_surface(last, t_ref)


def horizontal_registration_bias(surface, cols, depth=3.0, starts=np.linspace(-1.5, 1.5, 7)):
    ys = np.arange(10, 150, 2)
    uv = np.array([[c, y] for c in cols for y in ys], float)
    prob = RegistrationProblem(uv, np.full(len(uv), 1 / depth),
                               GridSurface(surface.negative, gradient="bilinear"), CAM)
    shifts = []
    for s in starts:
        res = track(prob, MotionParams(t=[s * depth / CAM.fx, 0, 0]), free=[3])
        shifts.append(CAM.fx * res.theta.t[0] / depth)
    return np.array(shifts)
