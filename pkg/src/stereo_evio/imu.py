"""IMU measurement model, pre-integration and motion prediction.

The IMU body frame coincides with the left camera frame.  Gravity ``g_w`` is
the world-frame specific force of a body at rest, ``(0, 0, +9.81)`` with z up;
a free-falling IMU therefore accelerates by ``-g_w``.  Pre-integrated terms
are gravity-free and expressed in the frame of the first sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (Pose, US_PER_S, quat_exp, quat_multiply, quat_normalize, quat_to_matrix,
                   skew)

GRAVITY = 9.81
ACCEL_BIAS_BOUND = 1.0
GYRO_BIAS_BOUND = 0.2


@dataclass(frozen=True)
class ImuSample:
    t: int
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gyro, dtype=float).reshape(3)
        a = np.asarray(self.accel, dtype=float).reshape(3)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(a))):
            raise ValueError("IMU sample must be finite")
        object.__setattr__(self, "gyro", g)
        object.__setattr__(self, "accel", a)


@dataclass(frozen=True)
class ImuBias:
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "b_a", np.asarray(self.b_a, dtype=float).reshape(3).copy())
        object.__setattr__(self, "b_g", np.asarray(self.b_g, dtype=float).reshape(3).copy())

    def within_bounds(self, accel_bound=ACCEL_BIAS_BOUND, gyro_bound=GYRO_BIAS_BOUND):
        return bool(np.linalg.norm(self.b_a) < accel_bound and np.linalg.norm(self.b_g) < gyro_bound)

    def vector(self):
        return np.concatenate([self.b_a, self.b_g])


@dataclass(frozen=True)
class GravityModel:
    g_w: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY]))

    def __post_init__(self):
        g = np.asarray(self.g_w, dtype=float).reshape(3)
        g = g * (GRAVITY / np.linalg.norm(g))
        object.__setattr__(self, "g_w", g)


class ImuBuffer:
    """Column-wise IMU stream (``t`` µs, ``gyro`` and ``accel`` as (N, 3))."""

    def __init__(self, t, gyro, accel):
        self.t = np.asarray(t, dtype=np.int64)
        self.gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(accel, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.gyro) == len(self.accel)):
            raise ValueError("IMU columns must have equal length")

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]):
        samples = list(samples)
        return cls([s.t for s in samples], [s.gyro for s in samples] or np.zeros((0, 3)),
                   [s.accel for s in samples] or np.zeros((0, 3)))

    def __len__(self):
        return len(self.t)

    def samples(self):
        return [ImuSample(int(t), g, a) for t, g, a in zip(self.t, self.gyro, self.accel)]

    def interpolate(self, t):
        if not (self.t[0] <= t <= self.t[-1]):
            raise ValueError("time outside the IMU stream")
        g = np.array([np.interp(t, self.t, self.gyro[:, k]) for k in range(3)])
        a = np.array([np.interp(t, self.t, self.accel[:, k]) for k in range(3)])
        return g, a

    def between(self, t0, t1):
        """Samples covering ``[t0, t1]``; the end points are linearly interpolated."""
        if t1 <= t0:
            raise ValueError("empty IMU interval")
        i0 = np.searchsorted(self.t, t0, side="right")
        i1 = np.searchsorted(self.t, t1, side="left")
        g0, a0 = self.interpolate(t0)
        g1, a1 = self.interpolate(t1)
        t = np.concatenate([[t0], self.t[i0:i1], [t1]])
        gyro = np.vstack([g0, self.gyro[i0:i1], g1])
        accel = np.vstack([a0, self.accel[i0:i1], a1])
        return ImuBuffer(t, gyro, accel)


def _as_buffer(samples):
    if isinstance(samples, ImuBuffer):
        return samples
    return ImuBuffer.from_samples(samples)


def right_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    th = np.linalg.norm(phi)
    K = skew(phi)
    if th < 1e-6:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (np.eye(3) - (1 - np.cos(th)) / th**2 * K + (th - np.sin(th)) / th**3 * K @ K)


@dataclass(frozen=True)
class Preintegration:
    """Relative motion aggregates between the first and last sample of a slice."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    dt_total: float
    J_alpha_bg: np.ndarray
    J_alpha_ba: np.ndarray
    J_beta_bg: np.ndarray
    J_beta_ba: np.ndarray
    J_gamma_bg: np.ndarray
    bias: ImuBias
    t0: int = 0
    t1: int = 0
    samples: ImuBuffer | None = field(default=None, repr=False, compare=False)

    @property
    def gamma_matrix(self):
        return quat_to_matrix(self.gamma)


def preintegrate(samples, bias: ImuBias = ImuBias()) -> Preintegration:
    """Midpoint pre-integration of bias-corrected samples.

    Rotation advances by the exact exponential of the midpoint rate; the
    velocity and position terms use the average of the rotated accelerations
    at both ends of each step.  First-order bias Jacobians are propagated
    alongside.  Gravity is not removed here.
    """
    buf = _as_buffer(samples)
    if len(buf) < 2:
        raise ValueError("pre-integration needs at least two samples")
    if np.any(np.diff(buf.t) <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")

    bg, ba = bias.b_g, bias.b_a
    alpha = np.zeros(3)
    beta = np.zeros(3)
    q = np.array([1.0, 0.0, 0.0, 0.0])
    R0 = np.eye(3)
    Jab = np.zeros((3, 3))
    Jaa = np.zeros((3, 3))
    Jbb = np.zeros((3, 3))
    Jba = np.zeros((3, 3))
    Jg = np.zeros((3, 3))

    ts = buf.t.astype(np.float64) / US_PER_S
    for k in range(len(buf) - 1):
        dt = ts[k + 1] - ts[k]
        w = 0.5 * (buf.gyro[k] + buf.gyro[k + 1]) - bg
        phi = w * dt
        dq = quat_exp(phi)
        q1 = quat_multiply(q, dq)
        R1 = quat_to_matrix(q1)
        a0 = buf.accel[k] - ba
        a1 = buf.accel[k + 1] - ba
        acc = 0.5 * (R0 @ a0 + R1 @ a1)

        Jg1 = quat_to_matrix(dq).T @ Jg - right_jacobian(phi) * dt
        S = R0 @ skew(a0) @ Jg + R1 @ skew(a1) @ Jg1
        Rs = R0 + R1
        Jab = Jab + Jbb * dt - 0.25 * dt * dt * S
        Jaa = Jaa + Jba * dt - 0.25 * dt * dt * Rs
        Jbb = Jbb - 0.5 * dt * S
        Jba = Jba - 0.5 * dt * Rs

        alpha = alpha + beta * dt + 0.5 * acc * dt * dt
        beta = beta + acc * dt
        q, R0, Jg = q1, R1, Jg1

    return Preintegration(alpha, beta, quat_normalize(q), float(ts[-1] - ts[0]), Jab, Jaa, Jbb,
                          Jba, Jg, bias, int(buf.t[0]), int(buf.t[-1]), buf)


def correct_for_bias_delta(pre: Preintegration, new_bias: ImuBias) -> Preintegration:
    """First-order update of a pre-integration to a new bias estimate.

    Error grows quadratically with the bias change; re-integrate for large
    changes.
    """
    dba = new_bias.b_a - pre.bias.b_a
    dbg = new_bias.b_g - pre.bias.b_g
    if not (np.linalg.norm(dba) < ACCEL_BIAS_BOUND and np.linalg.norm(dbg) < GYRO_BIAS_BOUND):
        raise ValueError("bias change outside the first-order validity bounds")
    alpha = pre.alpha + pre.J_alpha_bg @ dbg + pre.J_alpha_ba @ dba
    beta = pre.beta + pre.J_beta_bg @ dbg + pre.J_beta_ba @ dba
    gamma = quat_normalize(quat_multiply(pre.gamma, quat_exp(pre.J_gamma_bg @ dbg)))
    return replace(pre, alpha=alpha, beta=beta, gamma=gamma, bias=new_bias)


def predict_motion(prev_pose: Pose, prev_vel, pre: Preintegration, g: GravityModel = GravityModel()):
    """Propagate a world pose and velocity over the pre-integrated interval."""
    R = prev_pose.R
    dt = pre.dt_total
    v = np.asarray(prev_vel, dtype=float)
    p = prev_pose.p + v * dt - 0.5 * g.g_w * dt * dt + R @ pre.alpha
    v_next = v - g.g_w * dt + R @ pre.beta
    q = quat_multiply(prev_pose.q, pre.gamma)
    return Pose(q, p), v_next
