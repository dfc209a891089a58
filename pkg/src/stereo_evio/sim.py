"""Synthetic stereo event + IMU generator with analytic ground truth.

Trajectories are sums of sinusoids per degree of freedom (plus linear
drift), so pose, velocity, acceleration and body angular rate are available
in closed form.  Scenes are textured planes; the log intensity seen by each
pixel is ray cast at a virtual frame rate and events fire whenever it moves
a contrast threshold away from the pixel's reference level.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (CameraIntrinsics, EventStream, Pose, StereoRig, US_PER_S, so3_exp)
from .imu import GravityModel, ImuBias, ImuBuffer, right_jacobian

# camera looking along world +x with world z up (camera x right, y down)
R_FORWARD = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

def _sines(t, amp, freq, phase):
    """Value, first and second derivative of sum_k amp sin(2 pi f t + phase), per axis."""
    amp = np.asarray(amp, dtype=float).reshape(-1, 3)
    w = 2 * np.pi * np.asarray(freq, dtype=float).reshape(-1, 3)
    ph = np.asarray(phase, dtype=float).reshape(-1, 3)
    arg = w * t + ph
    s, c = np.sin(arg), np.cos(arg)
    return (amp * s).sum(0), (amp * w * c).sum(0), (-amp * w * w * s).sum(0)


@dataclass(frozen=True)
class TrajectoryModel:
    """``p(t) = p0 + v0 t + sines``; ``R(t) = R0 Exp(w0 t + sines)``.

    Amplitude/frequency/phase arrays are (k, 3); frequencies in Hz.
    """

    duration: float
    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pos_amp: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pos_freq: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pos_phase: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    R0: np.ndarray = field(default_factory=lambda: R_FORWARD.copy())
    w0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rot_amp: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    rot_freq: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    rot_phase: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        for name in ("p0", "v0", "w0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        for name in ("pos_amp", "pos_freq", "pos_phase", "rot_amp", "rot_freq", "rot_phase"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float).reshape(-1, 3))
        object.__setattr__(self, "R0", np.asarray(self.R0, dtype=float).reshape(3, 3))

    def _rotvec(self, t):
        r, rd, _ = _sines(t, self.rot_amp, self.rot_freq, self.rot_phase)
        return self.w0 * t + r, self.w0 + rd

    def pose(self, t) -> Pose:
        """World pose of the body (left camera) at time ``t`` in seconds."""
        p, _, _ = _sines(t, self.pos_amp, self.pos_freq, self.pos_phase)
        r, _ = self._rotvec(t)
        return Pose.from_matrix(self.R0 @ so3_exp(r), self.p0 + self.v0 * t + p)

    def velocity(self, t):
        _, v, _ = _sines(t, self.pos_amp, self.pos_freq, self.pos_phase)
        return self.v0 + v

    def acceleration(self, t):
        return _sines(t, self.pos_amp, self.pos_freq, self.pos_phase)[2]

    def angular_velocity(self, t):
        """Body-frame angular rate."""
        r, rd = self._rotvec(t)
        return right_jacobian(r) @ rd

    def pose_us(self, t_us) -> Pose:
        return self.pose(t_us / US_PER_S)

    def max_speed(self, n=2000):
        ts = np.linspace(0, self.duration, n)
        v = max(np.linalg.norm(self.velocity(t)) for t in ts)
        w = max(np.linalg.norm(self.angular_velocity(t)) for t in ts)
        return v, w

    def length(self, n=5000):
        ts = np.linspace(0, self.duration, n)
        P = np.array([self.pose(t).p for t in ts])
        return float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())


def static_trajectory(duration, pose: Pose | None = None):
    pose = Pose.from_matrix(R_FORWARD) if pose is None else pose
    return TrajectoryModel(duration, p0=pose.p, R0=pose.R)


def circle_trajectory(duration, radius=1.0, period=4.0, height=0.0):
    """Level circle, camera yawing so it always faces the direction of travel."""
    w = 2 * np.pi / period
    yaw_axis = R_FORWARD.T @ np.array([0.0, 0.0, 1.0])
    f = 1.0 / period
    return TrajectoryModel(duration,
                           p0=[0.0, 0.0, height],
                           pos_amp=[[radius, radius, 0.0]],
                           pos_freq=[[f, f, 0.0]],
                           pos_phase=[[np.pi / 2, 0.0, 0.0]],
                           R0=R_FORWARD @ so3_exp(yaw_axis * np.pi / 2),
                           w0=yaw_axis * w)


def wobble_trajectory(duration, speed=0.6, seed=0, pos_wobble=0.08, rot_wobble_deg=4.0):
    """Forward motion along world +x with smooth sinusoidal wobble in every DoF."""
    rng = np.random.default_rng(seed)
    pos_amp = pos_wobble * rng.uniform(0.4, 1.0, (2, 3)) * np.array([0.3, 1.0, 0.7])
    pos_freq = rng.uniform(0.15, 0.6, (2, 3))
    rot_amp = np.deg2rad(rot_wobble_deg) * rng.uniform(0.4, 1.0, (2, 3))
    rot_freq = rng.uniform(0.15, 0.6, (2, 3))
    return TrajectoryModel(duration,
                           v0=[speed, 0.0, 0.0],
                           pos_amp=pos_amp, pos_freq=pos_freq,
                           pos_phase=rng.uniform(0, 2 * np.pi, (2, 3)),
                           rot_amp=rot_amp, rot_freq=rot_freq,
                           rot_phase=rng.uniform(0, 2 * np.pi, (2, 3)))


def room_trajectory(duration, seed=0, pos_amp=(0.5, 0.8, 0.3), rot_amp_deg=(5.0, 7.0, 5.0)):
    """Bounded smooth motion in front of :func:`room_scene`, with varying attitude."""
    rng = np.random.default_rng(seed)
    pos = np.asarray(pos_amp, dtype=float)
    rot = np.deg2rad(np.asarray(rot_amp_deg, dtype=float))
    pos_amp = np.vstack([pos * rng.uniform(0.7, 1.0, 3), pos * rng.uniform(0.1, 0.25, 3)])
    pos_freq = np.vstack([rng.uniform(0.12, 0.22, 3), rng.uniform(0.4, 0.7, 3)])
    rot_amp = np.vstack([rot * rng.uniform(0.7, 1.0, 3), rot * rng.uniform(0.1, 0.25, 3)])
    rot_freq = np.vstack([rng.uniform(0.15, 0.3, 3), rng.uniform(0.4, 0.8, 3)])
    return TrajectoryModel(duration, pos_amp=pos_amp, pos_freq=pos_freq,
                           pos_phase=rng.uniform(0, 2 * np.pi, (2, 3)),
                           rot_amp=rot_amp, rot_freq=rot_freq,
                           rot_phase=rng.uniform(0, 2 * np.pi, (2, 3)))


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

MAX_WAVES = 6


@dataclass(frozen=True)
class Plane:
    """Textured rectangle (or infinite plane when a half extent is ``inf``).

    ``u_axis``/``v_axis`` span the plane; texture coordinates are metres
    along them from ``center``.  Every texture is ``tanh(k f)`` of a sum of
    plane waves ``f``: one wave for stripes, two for a checkerboard and
    ``MAX_WAVES`` random ones for the non-periodic ``noise`` pattern.
    """

    center: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    half_u: float = np.inf
    half_v: float = np.inf
    texture: str = "noise"         # noise | checker | stripes | flat
    period: float = 0.25
    angle: float = 0.0             # stripe orientation (rad) in the plane
    sharpness: float = 6.0
    base: float = 0.5
    contrast: float = 0.25
    seed: int = 0                  # noise pattern

    def __post_init__(self):
        if self.texture not in ("noise", "checker", "stripes", "flat"):
            raise ValueError(f"unknown texture {self.texture!r}")
        if not (0 < self.base - abs(self.contrast) and self.base + abs(self.contrast) <= 1):
            raise ValueError("texture intensity must stay inside (0, 1]")
        if self.period <= 0:
            raise ValueError("texture period must be positive")
        u = np.asarray(self.u_axis, dtype=float)
        v = np.asarray(self.v_axis, dtype=float)
        u = u / np.linalg.norm(u)
        v = v - (v @ u) * u
        v = v / np.linalg.norm(v)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "u_axis", u)
        object.__setattr__(self, "v_axis", v)

    @property
    def normal(self):
        return np.cross(self.u_axis, self.v_axis)

    def waves(self):
        """(MAX_WAVES, 4) rows ``(amp, wu, wv, phase)``: f = sum amp sin(wu a + wv b + phase)."""
        out = np.zeros((MAX_WAVES, 4))
        w = 2 * np.pi / self.period
        if self.texture == "stripes":
            out[0] = (1.0, w * np.cos(self.angle), w * np.sin(self.angle), 0.0)
        elif self.texture == "checker":
            # sin(wa) sin(wb) = (cos(wa - wb) - cos(wa + wb)) / 2
            out[0] = (0.5, w, -w, np.pi / 2)
            out[1] = (-0.5, w, w, np.pi / 2)
        elif self.texture == "noise":
            rng = np.random.default_rng(self.seed)
            ang = self.angle + np.pi * (np.arange(MAX_WAVES) + rng.uniform(0, 1, MAX_WAVES)) / MAX_WAVES
            k = w * rng.uniform(0.6, 1.4, MAX_WAVES)
            out[:, 0] = np.sqrt(2.0 / MAX_WAVES)
            out[:, 1] = k * np.cos(ang)
            out[:, 2] = k * np.sin(ang)
            out[:, 3] = rng.uniform(0, 2 * np.pi, MAX_WAVES)
        return out

    def intensity(self, a, b):
        """Band-limited reflectance at plane coordinates (a, b)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        f = np.zeros(np.broadcast(a, b).shape)
        for amp, wu, wv, ph in self.waves():
            if amp:
                f += amp * np.sin(wu * a + wv * b + ph)
        k = self.sharpness
        c = 0.0 if self.texture == "flat" else self.contrast
        return self.base + c * np.tanh(k * f) / np.tanh(k)


@dataclass(frozen=True)
class SceneModel:
    planes: tuple
    background: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "planes", tuple(self.planes))
        if not self.planes:
            raise ValueError("a scene needs at least one plane")


def fronto_parallel_scene(depth, texture="checker", period=0.25, angle=0.0, sharpness=6.0,
                          contrast=0.25, pose: Pose | None = None):
    """Infinite plane ``depth`` metres in front of ``pose`` (default: the forward camera)."""
    pose = Pose.from_matrix(R_FORWARD) if pose is None else pose
    R = pose.R
    center = pose.p + R[:, 2] * depth
    return SceneModel([Plane(center, R[:, 0], R[:, 1], texture=texture, period=period,
                             angle=angle, sharpness=sharpness, contrast=contrast)])


def room_scene(wall_distance=6.0, period=1.0, seed=0, n_panels=4):
    """Wall with a non-periodic pattern facing the forward camera, plus panels in front of it.

    Everything faces the camera, so there are no grazing surfaces whose
    texture would alias.
    """
    rng = np.random.default_rng(seed)
    y = np.array([0.0, 1.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    planes = [Plane([wall_distance, 0, 0], y, z, texture="noise", period=period, seed=seed)]
    for k in range(n_panels):
        depth = wall_distance * rng.uniform(0.35, 0.75)
        center = [depth, rng.uniform(-1.6, 1.6) * depth / 4, rng.uniform(-0.8, 0.8) * depth / 4]
        tex = "stripes" if k % 2 else "noise"
        planes.append(Plane(center, y, z, half_u=rng.uniform(0.3, 0.6), half_v=rng.uniform(0.3, 0.6),
                            texture=tex, period=period * rng.uniform(0.5, 0.8),
                            angle=rng.uniform(0, np.pi), base=0.5, contrast=0.2,
                            seed=seed + k + 1))
    return SceneModel(planes)


def bars_scene(depth=3.0, background_depth=8.0, bar_width=0.12, spacing=0.6, extent=1.5,
               vertical=None, horizontal=None):
    """Horizontal and vertical flat bars in front of a flat background.

    Bars sit every ``spacing`` metres unless explicit ``vertical`` (world y)
    and ``horizontal`` (world z) offsets are given; irregular offsets avoid
    the repeated structure that makes stereo matching ambiguous.
    """
    y = np.array([0.0, 1.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    regular = np.arange(-extent, extent + 1e-9, spacing)
    vertical = regular if vertical is None else vertical
    horizontal = regular if horizontal is None else horizontal
    planes = [Plane([background_depth, 0, 0], y, z, texture="flat", base=0.3, contrast=0.0)]
    for o in vertical:
        planes.append(Plane([depth, o, 0.0], y, z, half_u=bar_width / 2, half_v=extent,
                            texture="flat", base=0.8, contrast=0.0))
    for o in horizontal:
        planes.append(Plane([depth - 0.01, 0.0, o], y, z, half_u=extent, half_v=bar_width / 2,
                            texture="flat", base=0.8, contrast=0.0))
    return SceneModel(planes)


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

class Renderer:
    """Ray caster for one camera, vectorised over pixels and planes (float32)."""

    def __init__(self, scene: SceneModel, cam: CameraIntrinsics, eps=1e-3):
        self.scene = scene
        self.cam = cam
        uu, vv = np.meshgrid(np.arange(cam.width, dtype=float), np.arange(cam.height, dtype=float))
        self.rays = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy,
                              np.ones_like(uu)], axis=-1).reshape(-1, 3)
        self._rays32 = self.rays.astype(np.float32)
        self.eps = eps
        pl = scene.planes
        self._C = np.array([p.center for p in pl])
        self._N = np.array([p.normal for p in pl])
        self._U = np.array([p.u_axis for p in pl])
        self._V = np.array([p.v_axis for p in pl])
        self._half = np.array([[p.half_u, p.half_v] for p in pl])
        self._finite = np.nonzero(np.isfinite(self._half).any(axis=1))[0]
        self._tex = []
        for p in pl:
            waves = [tuple(float(x) for x in w) for w in p.waves() if w[0] != 0]
            c = 0.0 if p.texture == "flat" else p.contrast / np.tanh(p.sharpness)
            self._tex.append((waves, float(p.sharpness), c, float(p.base)))

    def cast(self, pose: Pose, rays=None, precise=False):
        """Depth (z) and intensity for each ray; depth is inf on misses.

        Works in float32 unless ``precise``.
        """
        ft = np.float64 if precise else np.float32
        grid = rays is None
        if grid:
            # pixel rays are separable: x varies along columns, y along rows, z = 1
            cam = self.cam
            rx = ((np.arange(cam.width) - cam.cx) / cam.fx).astype(ft)[None, :]
            ry = ((np.arange(cam.height) - cam.cy) / cam.fy).astype(ft)[:, None]
            rz = ft(1.0)
            shape = (cam.height, cam.width)
        else:
            rays = np.asarray(rays, dtype=ft)
            rx, ry, rz = rays[:, 0].copy(), rays[:, 1].copy(), rays[:, 2].copy()
            shape = (len(rays),)
        R = pose.R
        o = pose.p
        P = len(self._N)
        # plane frames expressed in the camera frame
        n_c = (self._N @ R).astype(ft)
        u_c = (self._U @ R).astype(ft)
        v_c = (self._V @ R).astype(ft)
        num = ((self._C - o) * self._N).sum(1).astype(ft)
        oc_u = ((o - self._C) * self._U).sum(1).astype(ft)
        oc_v = ((o - self._C) * self._V).sum(1).astype(ft)
        eps = ft(self.eps)

        depth = np.full(shape, np.inf, dtype=ft)
        idx = np.full(shape, P, dtype=np.intp)
        a_hit = np.zeros(shape, dtype=ft)
        b_hit = np.zeros(shape, dtype=ft)
        with np.errstate(divide="ignore", invalid="ignore"):
            for j in range(P):
                den = (n_c[j, 0] * rx + n_c[j, 2] * rz) + n_c[j, 1] * ry
                sj = num[j] / den
                a = oc_u[j] + sj * ((u_c[j, 0] * rx + u_c[j, 2] * rz) + u_c[j, 1] * ry)
                b = oc_v[j] + sj * ((v_c[j, 0] * rx + v_c[j, 2] * rz) + v_c[j, 1] * ry)
                upd = (sj > eps) & (sj < depth)
                if np.isfinite(self._half[j, 0]):
                    upd &= np.abs(a) <= self._half[j, 0]
                if np.isfinite(self._half[j, 1]):
                    upd &= np.abs(b) <= self._half[j, 1]
                np.copyto(depth, sj, where=upd)
                np.copyto(a_hit, a, where=upd)
                np.copyto(b_hit, b, where=upd)
                idx[upd] = j
        idx = idx.ravel()
        a_hit = a_hit.ravel()
        b_hit = b_hit.ravel()
        value = np.full(idx.shape, self.scene.background, dtype=ft)
        for j, (waves, k, c, base) in enumerate(self._tex):
            sel = np.nonzero(idx == j)[0]
            if not len(sel):
                continue
            if not c or not waves:
                value[sel] = base
                continue
            a, b = a_hit[sel], b_hit[sel]
            f = np.zeros(len(sel), dtype=ft)
            for amp, wu, wv, ph in waves:
                f += ft(amp) * np.sin(ft(wu) * a + ft(wv) * b + ft(ph))
            value[sel] = ft(base) + ft(c) * np.tanh(ft(k) * f)
        return depth.astype(np.float64).ravel(), value.astype(np.float64).ravel()

    def log_intensity(self, pose: Pose):
        _, val = self.cast(pose)
        return np.log(val).reshape(self.cam.height, self.cam.width)

    def inverse_depth(self, pose: Pose):
        depth, _ = self.cast(pose, precise=True)
        rho = np.where(np.isfinite(depth), 1.0 / depth, 0.0)
        return rho.reshape(self.cam.height, self.cam.width)


def gt_depth(scene: SceneModel, pose: Pose, cam: CameraIntrinsics):
    """Exact inverse depth per pixel (0 where the ray hits nothing)."""
    return Renderer(scene, cam).inverse_depth(pose)


def right_pose(left_pose: Pose, rig: StereoRig) -> Pose:
    return left_pose @ rig.T_right_left.inverse()


def edge_mask(log_image, threshold=0.05, dilate=1):
    """Pixels on strong log-intensity edges (Sobel magnitude), optionally dilated."""
    from scipy import ndimage

    gx = ndimage.sobel(log_image, axis=1) / 8.0
    gy = ndimage.sobel(log_image, axis=0) / 8.0
    mag = np.hypot(gx, gy)
    mask = mag > threshold
    if dilate:
        mask = ndimage.binary_dilation(mask, iterations=dilate)
    return mask


# --------------------------------------------------------------------------
# events
# --------------------------------------------------------------------------

class EventEmitter:
    """Per-pixel contrast-threshold model driven by successive log frames."""

    def __init__(self, log0, t0_us, threshold, threshold_sigma=0.0, rng=None):
        self.ref = np.asarray(log0, dtype=float).reshape(-1).copy()
        self.prev = self.ref.copy()
        self.t_prev = float(t0_us)
        h, w = np.shape(log0)
        self.width, self.height = w, h
        if threshold_sigma > 0:
            rng = np.random.default_rng(rng)
            self.C = np.maximum(threshold + threshold_sigma * rng.standard_normal(h * w),
                                0.1 * threshold)
        else:
            self.C = np.full(h * w, float(threshold))
        self.chunks = []

    def step(self, log_new, t_us):
        L = np.asarray(log_new, dtype=float).reshape(-1)
        diff = L - self.ref
        n = np.floor(np.abs(diff) / self.C).astype(np.int64)
        idx = np.nonzero(n)[0]
        if len(idx):
            cnt = n[idx]
            sign = np.sign(diff[idx])
            pix = np.repeat(idx, cnt)
            k = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + 1
            sg = np.repeat(sign, cnt)
            level = self.ref[pix] + sg * k * self.C[pix]
            span = L[pix] - self.prev[pix]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(np.abs(span) > 0, (level - self.prev[pix]) / span, 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            ts = np.rint(self.t_prev + frac * (t_us - self.t_prev)).astype(np.int64)
            order = np.lexsort((pix, ts))
            self.chunks.append((ts[order], (pix % self.width)[order], (pix // self.width)[order],
                                sg[order].astype(np.int8)))
            self.ref[idx] += sign * cnt * self.C[idx]
        self.prev = L
        self.t_prev = float(t_us)

    def stream(self):
        if not self.chunks:
            return EventStream.empty(self.width, self.height)
        cols = [np.concatenate(c) for c in zip(*self.chunks)]
        return EventStream(*cols, self.width, self.height)


def _max_displacement(renderer: Renderer, pose_a: Pose, pose_b: Pose, step=8):
    """Largest image motion (px) of a sparse pixel grid between two poses."""
    rays = renderer.rays.reshape(renderer.cam.height, renderer.cam.width, 3)[::step, ::step]
    rays = rays.reshape(-1, 3)
    depth, _ = renderer.cast(pose_a, rays)
    ok = np.isfinite(depth)
    if not ok.any():
        return 0.0
    Xc = rays[ok] * depth[ok, None]
    Xw = pose_a.apply(Xc)
    Xb = pose_b.inverse().apply(Xw)
    front = Xb[:, 2] > 1e-3
    if not front.all():
        return np.inf
    uv_a = renderer.cam.project(Xc)
    uv_b = renderer.cam.project(Xb)
    return float(np.max(np.linalg.norm(uv_b - uv_a, axis=1)))


def gen_events(scene: SceneModel, trajectory: TrajectoryModel, rig: StereoRig,
               contrast_threshold=0.2, t_span=None, seed=0, min_rate=1000.0, max_disp=0.5,
               threshold_sigma=0.0, max_rate=200_000.0):
    """Left and right event streams over ``t_span`` (µs pair, default whole trajectory).

    The virtual frame interval starts at ``1/min_rate`` and is shortened so
    that no sampled pixel moves more than ``max_disp`` px between frames.
    Raises if that would need more than ``max_rate`` frames per second.
    """
    if contrast_threshold <= 0:
        raise ValueError("contrast threshold must be positive")
    if t_span is None:
        t_span = (0, int(round(trajectory.duration * US_PER_S)))
    t0, t1 = int(t_span[0]), int(t_span[1])
    rng = np.random.default_rng(seed)
    cams = [rig.left, rig.right]
    renderers = [Renderer(scene, c) for c in cams]
    T_lr = rig.T_right_left.inverse()

    def cam_poses(t):
        pl = trajectory.pose_us(t)
        return [pl, pl @ T_lr]

    p_now = cam_poses(t0)
    emitters = [EventEmitter(r.log_intensity(p), t0, contrast_threshold, threshold_sigma,
                             rng.integers(2**32)) for r, p in zip(renderers, p_now)]
    base_dt = US_PER_S / min_rate
    min_dt = US_PER_S / max_rate
    t = float(t0)
    while t < t1:
        dt = min(base_dt, t1 - t)
        while True:
            t_next = min(t + dt, t1)
            p_next = cam_poses(int(round(t_next)))
            disp = max(_max_displacement(r, pa, pb)
                       for r, pa, pb in zip(renderers, p_now, p_next))
            if disp <= max_disp:
                break
            dt = dt * max_disp / disp * 0.9 if np.isfinite(disp) else dt / 4
            if dt < min_dt:
                raise RuntimeError(
                    f"motion too fast to sample: {disp:.2f} px per frame at t={t:.0f} us")
        for em, r, p in zip(emitters, renderers, p_next):
            em.step(r.log_intensity(p), t_next)
        t, p_now = t_next, p_next
    return emitters[0].stream(), emitters[1].stream()


# --------------------------------------------------------------------------
# IMU
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ImuNoiseModel:
    """White-noise densities (per sqrt(Hz)), initial bias and bias random-walk densities."""

    gyro_noise: float = 0.0
    accel_noise: float = 0.0
    bias: ImuBias = field(default_factory=ImuBias)
    gyro_walk: float = 0.0
    accel_walk: float = 0.0

    def __post_init__(self):
        if min(self.gyro_noise, self.accel_noise, self.gyro_walk, self.accel_walk) < 0:
            raise ValueError("noise densities must be non-negative")


@dataclass
class ImuStream:
    """Generated measurements plus the true bias at each sample."""

    buffer: ImuBuffer
    bias_a: np.ndarray
    bias_g: np.ndarray

    def samples(self):
        return self.buffer.samples()

    def true_bias(self, t_us) -> ImuBias:
        t = self.buffer.t
        return ImuBias([np.interp(t_us, t, self.bias_a[:, k]) for k in range(3)],
                       [np.interp(t_us, t, self.bias_g[:, k]) for k in range(3)])


def gen_imu(trajectory: TrajectoryModel, noise: ImuNoiseModel = ImuNoiseModel(),
            g: GravityModel = GravityModel(), rate=1000.0, t_span=None, seed=0) -> ImuStream:
    """Body-frame gyro and accelerometer readings with bias and noise.

    ``accel = R^T (a_world + g_w) + b_a + n_a`` and ``gyro = omega + b_g + n_g``.
    """
    if rate < 100:
        raise ValueError("IMU rate must be at least 100 Hz")
    if t_span is None:
        t_span = (0, int(round(trajectory.duration * US_PER_S)))
    step = US_PER_S / rate
    n = int(np.floor((t_span[1] - t_span[0]) / step + 1e-9)) + 1
    t_us = np.rint(t_span[0] + step * np.arange(n)).astype(np.int64)
    dt = 1.0 / rate
    rng = np.random.default_rng(seed)

    walk_g = noise.gyro_walk * np.sqrt(dt) * rng.standard_normal((n, 3))
    walk_a = noise.accel_walk * np.sqrt(dt) * rng.standard_normal((n, 3))
    walk_g[0] = walk_a[0] = 0
    bias_g = noise.bias.b_g + np.cumsum(walk_g, axis=0)
    bias_a = noise.bias.b_a + np.cumsum(walk_a, axis=0)
    white_g = noise.gyro_noise / np.sqrt(dt) * rng.standard_normal((n, 3))
    white_a = noise.accel_noise / np.sqrt(dt) * rng.standard_normal((n, 3))

    gyro = np.empty((n, 3))
    accel = np.empty((n, 3))
    for k, tu in enumerate(t_us):
        ts = tu / US_PER_S
        R = trajectory.pose(ts).R
        gyro[k] = trajectory.angular_velocity(ts)
        accel[k] = R.T @ (trajectory.acceleration(ts) + g.g_w)
    gyro += bias_g + white_g
    accel += bias_a + white_a
    return ImuStream(ImuBuffer(t_us, gyro, accel), bias_a, bias_g)


# --------------------------------------------------------------------------
# default rig and datasets
# --------------------------------------------------------------------------

def default_rig(width=346, height=260, hfov_deg=75.0, baseline=0.12) -> StereoRig:
    return StereoRig.symmetric(CameraIntrinsics.from_fov(width, height, hfov_deg), baseline)
