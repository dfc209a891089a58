"""Pose tracking by registering a local depth map against the negative OS-TS.

Each map point is back-projected with its inverse depth, moved by the
motion ``theta = (c, t)`` (Cayley rotation, translation) from the reference
frame into the current left frame and projected.  The cost of a point is the
negative surface value where it lands: 0 on a fresh edge, 1 far from any edge
or outside the image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CameraIntrinsics, MotionParams, Pose, cayley_rotate_jacobian,
                   cayley_to_rotation)
from .mapping import LocalDepthMap, bilinear
from .representations import sobel_gradients

MIN_POINTS = 50
POINT_BUDGET = 2000
HUBER_DELTA = 0.5
MAX_ITERATIONS = 50
MIN_DEPTH = 1e-3


GRADIENTS = ("sobel", "bilinear")


class GridSurface:
    """Image surface sampled bilinearly.

    ``gradient="sobel"`` interpolates Sobel derivatives computed once per
    surface.  ``gradient="bilinear"`` returns the exact derivative of the
    bilinear interpolant, so a zero gradient coincides with a minimum of the
    sampled values; smoothed Sobel gradients vanish up to half a pixel away
    from an asymmetric valley such as the edge of an OS-TS.  Samples outside
    the image take ``fill`` with zero gradient.
    """

    def __init__(self, values, fill=1.0, gradient="sobel"):
        if gradient not in GRADIENTS:
            raise ValueError(f"gradient must be one of {GRADIENTS}")
        self.values = np.asarray(values, dtype=float)
        self.gradient = gradient
        if gradient == "sobel":
            self.gx, self.gy = sobel_gradients(self.values)
        self.fill = float(fill)
        self.height, self.width = self.values.shape

    def sample(self, u, v):
        inside = (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)
        if self.gradient == "sobel":
            val = bilinear(self.values, u, v, self.fill)
            gu = bilinear(self.gx, u, v, 0.0)
            gv = bilinear(self.gy, u, v, 0.0)
            return val, gu, gv, inside
        img = self.values
        H, W = img.shape
        uc = np.clip(u, 0, W - 1)
        vc = np.clip(v, 0, H - 1)
        u0 = np.minimum(np.floor(uc).astype(np.int64), W - 2)
        v0 = np.minimum(np.floor(vc).astype(np.int64), H - 2)
        a, b = uc - u0, vc - v0
        i00, i01 = img[v0, u0], img[v0, u0 + 1]
        i10, i11 = img[v0 + 1, u0], img[v0 + 1, u0 + 1]
        val = (1 - a) * (1 - b) * i00 + a * (1 - b) * i01 + (1 - a) * b * i10 + a * b * i11
        gu = (1 - b) * (i01 - i00) + b * (i11 - i10)
        gv = (1 - a) * (i10 - i00) + a * (i11 - i01)
        return (np.where(inside, val, self.fill), np.where(inside, gu, 0.0),
                np.where(inside, gv, 0.0), inside)


class AnalyticSurface:
    """Smooth surface given by callables, for gradient checks."""

    def __init__(self, func, grad, width, height, fill=1.0):
        self.func, self.grad = func, grad
        self.width, self.height = width, height
        self.fill = float(fill)

    def sample(self, u, v):
        inside = (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)
        gu, gv = self.grad(u, v)
        val = np.where(inside, self.func(u, v), self.fill)
        return val, np.where(inside, gu, 0.0), np.where(inside, gv, 0.0), inside


def negative_surface(osts, gradient="sobel") -> GridSurface:
    return GridSurface(osts.negative, gradient=gradient)


@dataclass(frozen=True)
class RegistrationProblem:
    """Map points (pixel ``uv`` and inverse depth ``rho`` in the reference frame) and a surface."""

    uv: np.ndarray
    rho: np.ndarray
    surface: object
    cam: CameraIntrinsics
    ref_pose: Pose = Pose()

    def __post_init__(self):
        uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        if len(uv) != len(rho):
            raise ValueError("uv and rho must have the same length")
        if np.any(rho <= 0):
            raise ValueError("inverse depths must be positive")
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "_X", self.cam.backproject(uv, 1.0 / rho))

    def __len__(self):
        return len(self.rho)

    @property
    def solvable(self):
        return len(self) >= MIN_POINTS

    @classmethod
    def from_map(cls, depth_map: LocalDepthMap, surface, cam, budget=POINT_BUDGET, rng=None):
        """Uniform subsample of at most ``budget`` map points."""
        uv, rho = depth_map.uv, depth_map.rho
        if len(rho) > budget:
            rng = np.random.default_rng(rng)
            keep = np.sort(rng.choice(len(rho), budget, replace=False))
            uv, rho = uv[keep], rho[keep]
        return cls(uv, rho, surface, cam, depth_map.ref_pose)


def _theta_vector(theta):
    return theta.vector() if isinstance(theta, MotionParams) else np.asarray(theta, dtype=float)


def warp(x, rho, theta, cam: CameraIntrinsics):
    """Pixels ``x`` (N, 2) with inverse depth ``rho`` moved into the current frame.

    Returns ``(uv, valid)``; ``valid`` is false for points landing behind
    the camera.
    """
    th = _theta_vector(theta)
    X = cam.backproject(np.asarray(x, dtype=float), 1.0 / np.asarray(rho, dtype=float))
    Xc = X @ cayley_to_rotation(th[:3]).T + th[3:6]
    valid = Xc[..., 2] > MIN_DEPTH
    z = np.where(valid, Xc[..., 2], 1.0)
    uv = np.stack([cam.fx * Xc[..., 0] / z + cam.cx, cam.fy * Xc[..., 1] / z + cam.cy], axis=-1)
    return uv, valid


def residuals(problem: RegistrationProblem, theta, jacobian=False):
    """Per-point negative-surface values, and optionally their (N, 6) Jacobian."""
    th = _theta_vector(theta)
    X = problem._X
    Xc = X @ cayley_to_rotation(th[:3]).T + th[3:6]
    valid = Xc[:, 2] > MIN_DEPTH
    z = np.where(valid, Xc[:, 2], 1.0)
    cam = problem.cam
    u = cam.fx * Xc[:, 0] / z + cam.cx
    v = cam.fy * Xc[:, 1] / z + cam.cy
    val, gu, gv, inside = problem.surface.sample(u, v)
    ok = valid & inside
    r = np.where(ok, val, problem.surface.fill)
    if not jacobian:
        return r
    # d(u, v)/d(Xc)
    iz = 1.0 / z
    dXc = np.zeros((len(X), 3))
    dXc[:, 0] = gu * cam.fx * iz
    dXc[:, 1] = gv * cam.fy * iz
    dXc[:, 2] = -(gu * cam.fx * Xc[:, 0] + gv * cam.fy * Xc[:, 1]) * iz * iz
    J = np.empty((len(X), 6))
    J[:, :3] = np.einsum("ni,nij->nj", dXc, cayley_rotate_jacobian(th[:3], X))
    J[:, 3:] = dXc
    J[~ok] = 0.0
    return r, J


def objective(problem: RegistrationProblem, theta):
    """Sum of negative-surface values at the warped points (out of view counts 1)."""
    return float(residuals(problem, theta).sum())


def objective_gradient(problem: RegistrationProblem, theta):
    """Chain-rule gradient of :func:`objective` with respect to (c, t)."""
    _, J = residuals(problem, theta, jacobian=True)
    return J.sum(axis=0)


def huber_cost(r, delta):
    """Robust cost; ``delta=None`` gives plain least squares ``0.5 r^2``."""
    a = np.abs(r)
    if delta is None:
        return float(0.5 * (a * a).sum())
    return float(np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta)).sum())


def _huber_weights(r, delta):
    if delta is None:
        return np.ones_like(r)
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


@dataclass(frozen=True)
class TrackingResult:
    """``cost`` is the robust least-squares cost the solver minimised."""

    theta: MotionParams
    cost: float
    iterations: int
    converged: bool
    cost0: float = np.nan
    objective: float = np.nan

    def pose(self, ref_pose: Pose) -> Pose:
        return pose_from_motion(ref_pose, self.theta)


def pose_from_motion(ref_pose: Pose, theta: MotionParams) -> Pose:
    """World pose of the current frame: ``T_w_ref * T_cur_ref^-1``."""
    return ref_pose @ Pose.from_motion(theta).inverse()


def motion_from_poses(ref_pose: Pose, cur_pose: Pose) -> MotionParams:
    """Motion parameters mapping reference-frame points into ``cur_pose``."""
    return MotionParams.from_pose(cur_pose.inverse() @ ref_pose)


class DegenerateProblem(ValueError):
    """Too few points to attempt a registration."""


def track(problem: RegistrationProblem, theta_init, max_iterations=MAX_ITERATIONS,
          huber_delta=HUBER_DELTA, lam0=1e-4, step_tol=1e-6, rel_tol=1e-8, free=None):
    """Levenberg-Marquardt registration from ``theta_init``.

    ``free`` optionally lists the parameter indices (0-2 rotation, 3-5
    translation) to optimise; the rest stay at their initial values.
    """
    if not problem.solvable:
        raise DegenerateProblem(f"{len(problem)} points, need at least {MIN_POINTS}")
    x = _theta_vector(theta_init).astype(float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("initial motion must be finite")
    free = np.arange(6) if free is None else np.asarray(free)

    r, J = residuals(problem, x, jacobian=True)
    cost = cost0 = huber_cost(r, huber_delta)
    lam = lam0
    converged = False
    it = 0
    while it < max_iterations:
        it += 1
        w = _huber_weights(r, huber_delta)
        Jf = J[:, free]
        H = Jf.T @ (Jf * w[:, None])
        g = Jf.T @ (w * r)
        diag = np.maximum(np.diag(H), 1e-9)
        try:
            step_f = np.linalg.solve(H + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            break
        step = np.zeros(6)
        step[free] = step_f
        cand = x + step
        r_new, J_new = residuals(problem, cand, jacobian=True)
        c_new = huber_cost(r_new, huber_delta)
        if c_new <= cost:
            decrease = cost - c_new
            x, r, J = cand, r_new, J_new
            prev, cost = cost, c_new
            lam = max(lam / 10.0, 1e-10)
            if np.linalg.norm(step) < step_tol or decrease <= rel_tol * prev:
                converged = True
                break
        else:
            lam *= 10.0
            if np.linalg.norm(step) < step_tol or lam > 1e10:
                converged = True
                break
    theta = MotionParams.from_vector(x)
    return TrackingResult(theta, cost, it, converged, cost0, float(r.sum()))


def track_coarse_to_fine(problem: RegistrationProblem, surface_values, theta_init,
                         sigmas=(8.0, 4.0, 2.0), rotation_first=True, **kwargs):
    """Run :func:`track` on progressively less blurred copies of the surface, then the original.

    Widens the convergence basin when the initial guess is several pixels
    off.  With ``rotation_first`` the blurriest level solves for rotation
    alone, which absorbs most of a large image shift without the
    rotation/translation ambiguity.
    """
    from scipy import ndimage

    theta = _theta_vector(theta_init)
    total = 0
    for level, sigma in enumerate(sigmas):
        blurred = GridSurface(ndimage.gaussian_filter(np.asarray(surface_values, float), sigma,
                                                      mode="nearest"))
        coarse = RegistrationProblem(problem.uv, problem.rho, blurred, problem.cam,
                                     problem.ref_pose)
        if level == 0 and rotation_first:
            res = track(coarse, theta, free=[0, 1, 2], **kwargs)
            theta = res.theta.vector()
            total += res.iterations
        res = track(coarse, theta, **kwargs)
        theta = res.theta.vector()
        total += res.iterations
    res = track(problem, theta, **kwargs)
    return TrackingResult(res.theta, res.cost, total + res.iterations, res.converged, res.cost0,
                          res.objective)
