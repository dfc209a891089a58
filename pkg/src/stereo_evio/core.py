"""Domain types shared by every stage: events, camera geometry and poses.

Conventions
-----------
* Timestamps are integer microseconds; they become float seconds only inside
  numeric kernels.
* Quaternions are Hamilton, scalar first ``(w, x, y, z)``.
* ``Pose`` maps points from its own frame into the parent frame:
  ``X_parent = R @ X_child + p``.  ``T_a_b`` therefore reads "b expressed in a".
* Camera frames are x right, y down, z forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

US_PER_S = 1_000_000


# --------------------------------------------------------------------------
# small linear-algebra helpers
# --------------------------------------------------------------------------

def skew(v):
    """Skew-symmetric matrix so that ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    # keep w >= 0 so that equal rotations compare equal
    return -q if q[0] < 0 else q


def quat_multiply(a, b):
    """Hamilton product ``a ⊗ b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_left(q):
    """Matrix ``L(q)`` with ``q ⊗ r == L(q) @ r``."""
    w, x, y, z = q
    return np.array([[w, -x, -y, -z],
                     [x, w, -z, y],
                     [y, z, w, -x],
                     [z, -y, x, w]])


def quat_right(q):
    """Matrix ``R(q)`` with ``r ⊗ q == R(q) @ r``."""
    w, x, y, z = q
    return np.array([[w, -x, -y, -z],
                     [x, w, z, -y],
                     [y, -z, w, x],
                     [z, y, -x, w]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_exp(phi):
    """Unit quaternion of the rotation vector ``phi`` (axis * angle)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
        return q / np.linalg.norm(q)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * phi / angle])


def quat_log(q):
    """Rotation vector of a unit quaternion; inverse of :func:`quat_exp`."""
    q = quat_normalize(q)
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    return 2.0 * np.arctan2(s, q[0]) * v / s


def so3_exp(phi):
    return quat_to_matrix(quat_exp(phi))


def so3_log(R):
    return quat_log(matrix_to_quat(R))


def rotation_angle(R):
    """Angle (rad) of a rotation matrix, robust near 0 and pi."""
    return float(np.linalg.norm(so3_log(R)))


# --------------------------------------------------------------------------
# Cayley parameterisation
# --------------------------------------------------------------------------

def cayley_to_rotation(c):
    """Rotation matrix ``(I - [c]x)^-1 (I + [c]x)`` in closed form.

    The matrix equals the rotation of the unit quaternion ``(1, c)/|(1, c)|``,
    i.e. angle ``2 atan|c|`` about ``c``.
    """
    c = np.asarray(c, dtype=float)
    s = float(c @ c)
    K = skew(c)
    return ((1.0 - s) * np.eye(3) + 2.0 * np.outer(c, c) + 2.0 * K) / (1.0 + s)


def rotation_to_cayley(R):
    """Inverse Cayley map; defined for rotation angles below 180 degrees."""
    q = matrix_to_quat(R)
    if q[0] < 1e-12:
        raise ValueError("Cayley parameters are undefined for 180 degree rotations")
    return q[1:] / q[0]


def cayley_rotate_jacobian(c, X):
    """Jacobian of ``cayley_to_rotation(c) @ X`` with respect to ``c``.

    ``X`` of shape (3,) gives a (3, 3) matrix; (N, 3) gives (N, 3, 3).
    """
    c = np.asarray(c, dtype=float)
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    s = float(c @ c)
    D = 1.0 + s
    cx = X @ c
    N = (1.0 - s) * X + 2.0 * cx[:, None] * c + 2.0 * np.cross(c, X)
    dN = (-2.0 * X[:, :, None] * c[None, None, :]
          + 2.0 * cx[:, None, None] * np.eye(3)
          + 2.0 * c[None, :, None] * X[:, None, :])
    # minus the skew matrix of each X
    dN[:, 0, 1] += 2.0 * X[:, 2]
    dN[:, 0, 2] -= 2.0 * X[:, 1]
    dN[:, 1, 0] -= 2.0 * X[:, 2]
    dN[:, 1, 2] += 2.0 * X[:, 0]
    dN[:, 2, 0] += 2.0 * X[:, 1]
    dN[:, 2, 1] -= 2.0 * X[:, 0]
    J = dN / D - N[:, :, None] * (2.0 * c)[None, None, :] / D**2
    return J[0] if single else J


# --------------------------------------------------------------------------
# poses
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid transform with unit quaternion ``q`` (w, x, y, z) and translation ``p``."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        p = np.asarray(self.p, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("pose components must be finite")
        q = quat_normalize(q)
        q.setflags(write=False)
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, p=None):
        return cls(matrix_to_quat(R), np.zeros(3) if p is None else p)

    @classmethod
    def from_motion(cls, theta: "MotionParams"):
        return cls.from_matrix(cayley_to_rotation(theta.c), theta.t)

    @property
    def R(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.p
        return T

    def inverse(self):
        qi = quat_conjugate(self.q)
        return Pose(qi, -quat_to_matrix(qi) @ self.p)

    def apply(self, X):
        """Transform points ``X`` of shape (3,) or (N, 3)."""
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.p

    def __matmul__(self, other: "Pose"):
        return compose(self, other)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.q, other.q) and np.array_equal(self.p, other.p))

    __hash__ = None


def compose(a: Pose, b: Pose) -> Pose:
    """SE(3) composition ``a * b``; the result quaternion is renormalised."""
    return Pose(quat_multiply(a.q, b.q), a.R @ b.p + a.p)


def inverse(a: Pose) -> Pose:
    return a.inverse()


def pose_distance(a: Pose, b: Pose):
    """(translation distance, rotation angle in rad) between two poses."""
    d = a.inverse() @ b
    return float(np.linalg.norm(a.p - b.p)), float(np.linalg.norm(quat_log(d.q)))


@dataclass(frozen=True)
class MotionParams:
    """Cayley rotation ``c`` and translation ``t`` of a rigid motion."""

    c: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(3).copy())
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3).copy())

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:3], theta[3:6])

    @classmethod
    def from_pose(cls, pose: Pose):
        return cls(rotation_to_cayley(pose.R), pose.p)

    def vector(self):
        return np.concatenate([self.c, self.t])

    def rotation(self):
        return cayley_to_rotation(self.c)


# --------------------------------------------------------------------------
# cameras
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")

    @classmethod
    def from_fov(cls, width, height, hfov_deg):
        f = 0.5 * width / np.tan(np.deg2rad(hfov_deg) / 2)
        return cls(f, f, width / 2 - 0.5, height / 2 - 0.5, width, height)

    @property
    def K(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def project(self, X):
        """Project camera-frame points (N, 3) to pixels (N, 2)."""
        X = np.asarray(X, dtype=float)
        z = X[..., 2]
        return np.stack([self.fx * X[..., 0] / z + self.cx, self.fy * X[..., 1] / z + self.cy], axis=-1)

    def backproject(self, uv, depth):
        uv = np.asarray(uv, dtype=float)
        depth = np.asarray(depth, dtype=float)
        x = (uv[..., 0] - self.cx) / self.fx
        y = (uv[..., 1] - self.cy) / self.fy
        return np.stack([x * depth, y * depth, depth], axis=-1)

    def in_bounds(self, uv, margin=0.0):
        uv = np.asarray(uv, dtype=float)
        return ((uv[..., 0] >= margin) & (uv[..., 0] <= self.width - 1 - margin)
                & (uv[..., 1] >= margin) & (uv[..., 1] <= self.height - 1 - margin))


@dataclass(frozen=True)
class StereoRig:
    """Rectified horizontal stereo pair; the right camera sits ``baseline`` to the right."""

    left: CameraIntrinsics
    right: CameraIntrinsics
    baseline: float

    def __post_init__(self):
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")
        if self.left.fy != self.right.fy or self.left.cy != self.right.cy:
            raise ValueError("rectified rig needs identical row geometry in both cameras")

    @classmethod
    def symmetric(cls, cam: CameraIntrinsics, baseline: float):
        return cls(cam, cam, baseline)

    @property
    def T_right_left(self) -> Pose:
        return Pose(p=[-self.baseline, 0.0, 0.0])

    @property
    def width(self):
        return self.left.width

    @property
    def height(self):
        return self.left.height


# --------------------------------------------------------------------------
# events
# --------------------------------------------------------------------------

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    polarity: int

    def __post_init__(self):
        if self.polarity not in (-1, 1):
            raise ValueError("polarity must be +1 or -1")
        if self.x < 0 or self.y < 0:
            raise ValueError("pixel coordinates must be non-negative")


class EventStream:
    """Time-ordered events stored column-wise (``t`` in µs, ``x``, ``y``, ``p``)."""

    def __init__(self, t, x, y, p, width, height, check=True):
        self.t = np.ascontiguousarray(t, dtype=np.int64)
        self.x = np.ascontiguousarray(x, dtype=np.int32)
        self.y = np.ascontiguousarray(y, dtype=np.int32)
        self.p = np.ascontiguousarray(p, dtype=np.int8)
        self.width = int(width)
        self.height = int(height)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal length")
        if check and n:
            if np.any(np.diff(self.t) < 0):
                raise ValueError("event timestamps must be non-decreasing")
            if (self.x.min() < 0 or self.y.min() < 0 or self.x.max() >= self.width
                    or self.y.max() >= self.height):
                raise ValueError("event coordinates outside the sensor")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be +1 or -1")

    @classmethod
    def empty(cls, width, height):
        return cls([], [], [], [], width, height)

    @classmethod
    def from_events(cls, events, width, height):
        events = list(events)
        return cls([e.t for e in events], [e.x for e in events], [e.y for e in events],
                   [e.polarity for e in events], width, height)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EventStream(self.t[i], self.x[i], self.y[i], self.p[i], self.width, self.height,
                               check=False)
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def window(self, t0, t1):
        """Events with ``t0 < t <= t1``."""
        i0 = np.searchsorted(self.t, t0, side="right")
        i1 = np.searchsorted(self.t, t1, side="right")
        return self[i0:i1]

    def to_records(self):
        rec = np.empty(len(self), dtype=EVENT_DTYPE)
        rec["t"], rec["x"], rec["y"], rec["p"] = self.t, self.x, self.y, self.p
        return rec

    @classmethod
    def merge(cls, streams):
        streams = list(streams)
        if not streams:
            raise ValueError("nothing to merge")
        t = np.concatenate([s.t for s in streams])
        order = np.argsort(t, kind="stable")
        cat = lambda name: np.concatenate([getattr(s, name) for s in streams])[order]
        return cls(t[order], cat("x"), cat("y"), cat("p"), streams[0].width, streams[0].height)
