"""Semi-dense inverse-depth mapping.

Static stereo runs ZNCC block matching along rectified scanlines of the left
and right time surfaces, with the per-disparity window sums maintained
recursively.  Temporal stereo sweeps inverse depth along the epipolar line
between two successive AA maps of the left camera, which recovers the
horizontal structures that static stereo cannot disambiguate.  Estimates are
merged into a local depth map that is propagated to new reference frames.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Pose, StereoRig

FLAT_VARIANCE = 1e-12
STATIC, TEMPORAL = 0, 1
SOURCE_NAMES = {STATIC: "static", TEMPORAL: "temporal"}

BLOCK_SIZE = 15
MAX_DISPARITY = 100
SCORE_THRESHOLD = 0.6
DISTINCTIVENESS = 0.1
SIGMA_DISPARITY = 0.5
RHO_SAMPLES = 60


# --------------------------------------------------------------------------
# ZNCC
# --------------------------------------------------------------------------

class ZnccScore(NamedTuple):
    value: float
    degenerate: bool = False


def zncc_naive(patch_l, patch_r) -> ZnccScore:
    """Zero-mean normalised cross-correlation of two equally sized patches."""
    l = np.asarray(patch_l, dtype=float)
    r = np.asarray(patch_r, dtype=float)
    if l.shape != r.shape:
        raise ValueError("patches must have the same shape")
    if l.size < 2:
        raise ValueError("patches need at least two pixels")
    dl = l - l.mean()
    dr = r - r.mean()
    var_l = np.mean(dl * dl)
    var_r = np.mean(dr * dr)
    if var_l < FLAT_VARIANCE or var_r < FLAT_VARIANCE:
        return ZnccScore(0.0, True)
    return ZnccScore(float(np.mean(dl * dr) / np.sqrt(var_l * var_r)), False)


class ZnccScan(NamedTuple):
    values: np.ndarray
    degenerate: np.ndarray


def zncc_naive_scan(patch_l, row_strip, d_range):
    """Reference scan: one independent :func:`zncc_naive` per candidate."""
    m, n = np.shape(patch_l)
    d0, d1 = d_range
    out = [zncc_naive(patch_l, row_strip[:, d:d + n]) for d in range(d0, d1 + 1)]
    return ZnccScan(np.array([s.value for s in out]), np.array([s.degenerate for s in out]))


def zncc_fast_scan(patch_l, row_strip, d_range) -> ZnccScan:
    """ZNCC of ``patch_l`` against every window ``row_strip[:, d:d+n]``, ``d0 <= d <= d1``.

    The window sum ``T_r`` and squared sum ``T_r2`` are carried from one
    candidate to the next by removing the leaving column and adding the
    entering one, so only the cross term costs O(m n) per candidate.
    """
    l = np.asarray(patch_l, dtype=float)
    strip = np.asarray(row_strip, dtype=float)
    m, n = l.shape
    d0, d1 = int(d_range[0]), int(d_range[1])
    if d1 < d0:
        raise ValueError("empty disparity range")
    if strip.shape[0] != m or d0 < 0 or d1 + n > strip.shape[1]:
        raise ValueError("strip too narrow for the disparity range")
    mn = m * n
    k = d1 - d0 + 1
    sub = strip[:, d0:d1 + n]

    col = sub.sum(axis=0)
    col2 = (sub * sub).sum(axis=0)
    # T_{r,d} = T_{r,d-1} - leaving column + entering column
    t_r = np.empty(k)
    t_r2 = np.empty(k)
    t_r[0] = col[:n].sum()
    t_r2[0] = col2[:n].sum()
    if k > 1:
        t_r[1:] = t_r[0] + np.cumsum(col[n:n + k - 1] - col[:k - 1])
        t_r2[1:] = t_r2[0] + np.cumsum(col2[n:n + k - 1] - col2[:k - 1])

    mu_l = l.mean()
    dl = l - mu_l
    var_l = float((dl * dl).sum())
    windows = sliding_window_view(sub, n, axis=1)  # (m, k, n)
    inner = np.einsum("ij,ikj->k", l, windows)
    cov = inner - mu_l * t_r
    var_r = t_r2 - t_r * t_r / mn

    degenerate = (var_r / mn < FLAT_VARIANCE) | (var_l / mn < FLAT_VARIANCE)
    denom = np.sqrt(np.where(degenerate, 1.0, var_l * np.maximum(var_r, 0.0)))
    values = np.where(degenerate, 0.0, cov / denom)
    return ZnccScan(values, degenerate)


def best_and_runner_up(scores):
    """Index of the best score and the best score outside its main lobe.

    The main lobe extends from the peak while scores keep strictly
    decreasing, so a plateau (ambiguous match) yields a runner-up equal to
    the best.
    """
    scores = np.asarray(scores)
    i = int(np.argmax(scores))
    lo = i
    while lo > 0 and scores[lo - 1] < scores[lo]:
        lo -= 1
    hi = i
    while hi < len(scores) - 1 and scores[hi + 1] < scores[hi]:
        hi += 1
    outside = np.concatenate([scores[:lo], scores[hi + 1:]])
    second = float(outside.max()) if len(outside) else -1.0
    return i, second


def _parabola_offset(s_m, s_0, s_p):
    denom = s_m - 2.0 * s_0 + s_p
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (s_m - s_p) / denom, -0.5, 0.5))


# --------------------------------------------------------------------------
# static stereo
# --------------------------------------------------------------------------

class StereoMatch(NamedTuple):
    disparity: float
    score: float


def static_stereo_match(point, ts_left, ts_right, d_range=(1, MAX_DISPARITY), block=BLOCK_SIZE,
                        score_threshold=SCORE_THRESHOLD, margin=DISTINCTIVENESS,
                        subpixel=True) -> Optional[StereoMatch]:
    """Block-match a left pixel along its scanline in the right image.

    ``ts_left``/``ts_right`` are 2-D arrays (time-surface values).  A left
    pixel at column ``x`` is compared with right columns ``x - d``.  The
    disparity range is clipped to what fits inside the image.  Returns
    ``None`` on a flat patch, a weak best score or a non-distinctive peak.
    """
    x, y = int(point[0]), int(point[1])
    h = block // 2
    H, W = ts_left.shape
    if y - h < 0 or y + h >= H or x - h < 0 or x + h >= W:
        return None
    d_min = max(int(d_range[0]), x + h - (W - 1))
    d_max = min(int(d_range[1]), x - h)
    if d_max < d_min:
        return None
    patch = ts_left[y - h:y + h + 1, x - h:x + h + 1]
    # strip column k holds the right window centred at x - d_max + k
    strip = ts_right[y - h:y + h + 1, x - h - d_max:x + h - d_min + 1]
    scan = zncc_fast_scan(patch, strip, (0, d_max - d_min))
    if scan.degenerate.all():
        return None
    scores = scan.values[::-1]  # index i <-> disparity d_min + i
    i, second = best_and_runner_up(scores)
    best = float(scores[i])
    if scan.degenerate[::-1][i] or best < score_threshold or best - second < margin:
        return None
    d = float(d_min + i)
    if subpixel and 0 < i < len(scores) - 1:
        d += _parabola_offset(scores[i - 1], scores[i], scores[i + 1])
    return StereoMatch(d, best)


def disparity_to_inverse_depth(d, rig: StereoRig, sigma_d=SIGMA_DISPARITY):
    """Inverse depth ``d / (fx b)`` and its first-order variance."""
    if not d > 0:
        raise ValueError("disparity must be positive")
    fb = rig.left.fx * rig.baseline
    return d / fb, (sigma_d / fb) ** 2


# --------------------------------------------------------------------------
# depth points and maps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StudentTModel:
    """Residual distribution parameters (mean, scale, degrees of freedom).

    Kept for completeness; fusion uses the 2-sigma Gaussian gate instead.
    """

    mu: float = 0.0
    scale: float = 1.0
    nu: float = 2.0

    def __post_init__(self):
        if self.scale <= 0 or self.nu <= 0:
            raise ValueError("scale and degrees of freedom must be positive")


@dataclass(frozen=True)
class DepthPoint:
    x: float
    y: float
    rho: float
    variance: float
    source: int = STATIC
    t: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("inverse depth must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")

    @property
    def pixel(self):
        return int(round(self.x)), int(round(self.y))


def fuse_depth(existing: DepthPoint, incoming: DepthPoint) -> DepthPoint:
    """Inverse-variance fusion of compatible estimates, else keep the more certain one."""
    va, vb = existing.variance, incoming.variance
    if abs(existing.rho - incoming.rho) > 2.0 * np.sqrt(va + vb):
        return incoming if vb < va else existing
    wa, wb = 1.0 / va, 1.0 / vb
    w = wa + wb
    return DepthPoint((wa * existing.x + wb * incoming.x) / w,
                      (wa * existing.y + wb * incoming.y) / w,
                      (wa * existing.rho + wb * incoming.rho) / w, 1.0 / w,
                      existing.source, max(existing.t, incoming.t))


class LocalDepthMap:
    """Sparse inverse-depth map anchored at ``ref_pose`` (world <- reference camera).

    Points are stored column-wise; at most one point per rounded pixel.
    """

    def __init__(self, ref_pose: Pose, width, height, points=(), t_ref=0):
        self.ref_pose = ref_pose
        self.width, self.height = int(width), int(height)
        self.t_ref = int(t_ref)
        pts = list(points)
        self.uv = np.array([[p.x, p.y] for p in pts], dtype=float).reshape(-1, 2)
        self.rho = np.array([p.rho for p in pts], dtype=float)
        self.var = np.array([p.variance for p in pts], dtype=float)
        self.source = np.array([p.source for p in pts], dtype=np.int8)
        self.t = np.array([p.t for p in pts], dtype=np.int64)
        self._check_unique()

    @classmethod
    def from_arrays(cls, ref_pose, width, height, uv, rho, var, source, t, t_ref=0):
        m = cls(ref_pose, width, height, t_ref=t_ref)
        m.uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        m.rho = np.asarray(rho, dtype=float)
        m.var = np.asarray(var, dtype=float)
        m.source = np.asarray(source, dtype=np.int8)
        m.t = np.asarray(t, dtype=np.int64)
        m._check_unique()
        return m

    def _check_unique(self):
        keys = self.keys()
        if len(np.unique(keys)) != len(keys):
            raise ValueError("local depth map holds two points on one pixel")

    def keys(self):
        px = np.rint(self.uv).astype(np.int64)
        return px[:, 1] * self.width + px[:, 0]

    def __len__(self):
        return len(self.rho)

    def points(self):
        return [DepthPoint(u, v, r, s, int(c), int(t))
                for (u, v), r, s, c, t in zip(self.uv, self.rho, self.var, self.source, self.t)]

    def pixel_set(self):
        return set(int(k) for k in self.keys())

    def subset(self, mask):
        return LocalDepthMap.from_arrays(self.ref_pose, self.width, self.height, self.uv[mask],
                                         self.rho[mask], self.var[mask], self.source[mask],
                                         self.t[mask], self.t_ref)

    def backproject(self, cam):
        """Reference-camera coordinates (N, 3) of all points."""
        return cam.backproject(self.uv, 1.0 / self.rho)

    def inverse_depth_image(self):
        img = np.zeros((self.height, self.width), dtype=np.float32)
        px = np.rint(self.uv).astype(np.int64)
        img[px[:, 1], px[:, 0]] = self.rho
        return img


def map_from_points(ref_pose, width, height, points, t_ref=0) -> LocalDepthMap:
    """Build a map, fusing points that land on the same pixel (in pixel order)."""
    by_key = {}
    for p in sorted(points, key=lambda q: (q.pixel[1], q.pixel[0], q.t)):
        k = p.pixel
        by_key[k] = p if k not in by_key else _fuse_or_prefer(by_key[k], p)
    return LocalDepthMap(ref_pose, width, height, by_key.values(), t_ref)


def _fuse_or_prefer(a: DepthPoint, b: DepthPoint) -> DepthPoint:
    if a.source == b.source:
        return fuse_depth(a, b)
    return a if a.source == STATIC else b


def merge_maps(static_map: LocalDepthMap, temporal_map: LocalDepthMap) -> LocalDepthMap:
    """Union keyed by pixel; the static estimate wins on collisions."""
    if len(temporal_map) == 0:
        return static_map.subset(np.ones(len(static_map), dtype=bool))
    taken = np.isin(temporal_map.keys(), static_map.keys())
    keep = ~taken
    return LocalDepthMap.from_arrays(
        static_map.ref_pose, static_map.width, static_map.height,
        np.concatenate([static_map.uv, temporal_map.uv[keep]]),
        np.concatenate([static_map.rho, temporal_map.rho[keep]]),
        np.concatenate([static_map.var, temporal_map.var[keep]]),
        np.concatenate([static_map.source, temporal_map.source[keep]]),
        np.concatenate([static_map.t, temporal_map.t[keep]]),
        static_map.t_ref)


def propagate_map(depth_map: LocalDepthMap, T_new_old: Pose, cam, new_ref_pose=None,
                  t_ref=None) -> LocalDepthMap:
    """Re-anchor every point in a new reference frame.

    ``T_new_old`` maps old-reference coordinates into the new reference.
    Points that end behind the camera or outside the image are dropped;
    points landing on one pixel are fused (same source) or resolved in
    favour of static stereo.
    """
    if new_ref_pose is None:
        new_ref_pose = depth_map.ref_pose @ T_new_old.inverse()
    t_ref = depth_map.t_ref if t_ref is None else t_ref
    if len(depth_map) == 0:
        return LocalDepthMap(new_ref_pose, depth_map.width, depth_map.height, t_ref=t_ref)
    X = T_new_old.apply(depth_map.backproject(cam))
    z = X[:, 2]
    front = z > 1e-6
    uv = cam.project(X[front])
    rho_new = 1.0 / z[front]
    ok = np.zeros(len(depth_map), dtype=bool)
    inb = cam.in_bounds(uv, margin=-0.49)
    ok[np.nonzero(front)[0][inb]] = True
    uv = uv[inb]
    rho_new = rho_new[inb]
    rho_old = depth_map.rho[ok]
    var_new = depth_map.var[ok] * (rho_new / rho_old) ** 4
    src = depth_map.source[ok]
    tt = depth_map.t[ok]

    px = np.rint(uv).astype(np.int64)
    keys = px[:, 1] * depth_map.width + px[:, 0]
    order = np.lexsort((tt, keys))
    uniq, first, cnt = np.unique(keys[order], return_index=True, return_counts=True)
    if np.all(cnt == 1):
        return LocalDepthMap.from_arrays(new_ref_pose, depth_map.width, depth_map.height,
                                         uv, rho_new, var_new, src, tt, t_ref)
    out = []
    for f, c in zip(first, cnt):
        idx = order[f:f + c]
        pts = [DepthPoint(uv[i, 0], uv[i, 1], rho_new[i], var_new[i], int(src[i]), int(tt[i]))
               for i in idx]
        acc = pts[0]
        for p in pts[1:]:
            acc = _fuse_or_prefer(acc, p)
        # fused sub-pixel position must stay on the key pixel
        k = int(keys[idx[0]])
        kx, ky = k % depth_map.width, k // depth_map.width
        acc = DepthPoint(float(np.clip(acc.x, kx - 0.5, kx + 0.49)),
                         float(np.clip(acc.y, ky - 0.5, ky + 0.49)),
                         acc.rho, acc.variance, acc.source, acc.t)
        out.append(acc)
    return LocalDepthMap(new_ref_pose, depth_map.width, depth_map.height, out, t_ref)


def fuse_into_map(depth_map: LocalDepthMap, new_points) -> LocalDepthMap:
    """Insert new estimates, fusing with existing ones at the same pixel."""
    pts = depth_map.points() + list(new_points)
    return map_from_points(depth_map.ref_pose, depth_map.width, depth_map.height, pts,
                           depth_map.t_ref)


# --------------------------------------------------------------------------
# temporal stereo
# --------------------------------------------------------------------------

def bilinear(image, u, v, fill=0.0):
    """Bilinear samples of ``image`` at float coordinates (any matching shapes)."""
    H, W = image.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    uc = np.clip(u, 0, W - 1)
    vc = np.clip(v, 0, H - 1)
    u0 = np.minimum(np.floor(uc).astype(np.int64), W - 2)
    v0 = np.minimum(np.floor(vc).astype(np.int64), H - 2)
    a = uc - u0
    b = vc - v0
    out = ((1 - a) * (1 - b) * image[v0, u0] + a * (1 - b) * image[v0, u0 + 1]
           + (1 - a) * b * image[v0 + 1, u0] + a * b * image[v0 + 1, u0 + 1])
    return np.where(inside, out, fill)


def _zncc_rows(ref, cand):
    """ZNCC of one reference patch (flat) against candidate rows (k, m*n)."""
    dl = ref - ref.mean()
    dc = cand - cand.mean(axis=1, keepdims=True)
    vl = np.mean(dl * dl)
    vc = np.mean(dc * dc, axis=1)
    flat = (vc < FLAT_VARIANCE) | (vl < FLAT_VARIANCE)
    return np.where(flat, 0.0, (dc @ dl) / len(dl) / np.sqrt(np.where(flat, 1.0, vl * vc))), flat


def _warp_block(offsets, x, y, rhos, cam, T_prev_curr):
    """Pixels in the previous frame of a block centred at (x, y), per inverse depth."""
    uv = np.array([x, y], dtype=float) + offsets                 # (b, 2)
    rays = cam.backproject(uv, np.ones(len(uv)))                  # (b, 3) depth 1
    R, t = T_prev_curr.R, T_prev_curr.p
    Rr = rays @ R.T                                               # (b, 3)
    X = Rr[None, :, :] / np.asarray(rhos)[:, None, None] + t      # (k, b, 3)
    z = X[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * X[..., 0] / z + cam.cx
        v = cam.fy * X[..., 1] / z + cam.cy
    return u, v, z


class TemporalMatch(NamedTuple):
    point: DepthPoint
    score: float
    epipolar_length: float


def temporal_stereo_match(point, aa_curr, aa_prev, T_curr_prev: Pose, rho_range, cam,
                          block=BLOCK_SIZE, n_samples=RHO_SAMPLES,
                          score_threshold=SCORE_THRESHOLD, margin=DISTINCTIVENESS,
                          sigma_px=SIGMA_DISPARITY, min_epipolar_angle_deg=10.0, t=0,
                          min_epipolar_length=0.0, refine_iterations=12):
    """Inverse depth of a left pixel from two successive AA-type images.

    ``aa_curr``/``aa_prev`` are 2-D float arrays.  ``T_curr_prev`` maps
    previous-frame coordinates into the current frame.  Returns a
    :class:`TemporalMatch` or ``None`` (degenerate baseline, epipolar line
    within ``min_epipolar_angle_deg`` of horizontal, or weak/ambiguous
    score).  ``min_epipolar_length`` (px) rejects baselines too short to
    resolve the inverse-depth range.
    """
    x, y = float(point[0]), float(point[1])
    if np.linalg.norm(T_curr_prev.p) < 1e-9:
        return None
    rho_lo, rho_hi = float(rho_range[0]), float(rho_range[1])
    T_prev_curr = T_curr_prev.inverse()
    h = block // 2
    H, W = aa_curr.shape
    xi, yi = int(round(x)), int(round(y))
    if yi - h < 0 or yi + h >= H or xi - h < 0 or xi + h >= W:
        return None

    # epipolar segment spanned by the inverse-depth range
    ends_u, ends_v, ends_z = _warp_block(np.zeros((1, 2)), x, y, [rho_lo, rho_hi], cam, T_prev_curr)
    if np.any(ends_z <= 0):
        return None
    du = ends_u[1, 0] - ends_u[0, 0]
    dv = ends_v[1, 0] - ends_v[0, 0]
    length = float(np.hypot(du, dv))
    if length < max(min_epipolar_length, 1e-6):
        return None
    angle = np.degrees(np.arctan2(abs(dv), abs(du)))
    if angle < min_epipolar_angle_deg:
        return None

    g = np.arange(-h, h + 1, dtype=float)
    offsets = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    ref = aa_curr[yi - h:yi + h + 1, xi - h:xi + h + 1].reshape(-1).astype(float)

    def scores_at(rhos):
        u, v, z = _warp_block(offsets, xi, yi, rhos, cam, T_prev_curr)
        valid = np.all(z > 0, axis=1) & np.all(np.isfinite(u), axis=1)
        vals = bilinear(aa_prev, np.nan_to_num(u), np.nan_to_num(v), fill=np.nan)
        valid &= ~np.any(np.isnan(vals), axis=1)
        s, flat = _zncc_rows(ref, np.nan_to_num(vals))
        return np.where(valid & ~flat, s, -1.0), valid & ~flat

    rhos = np.linspace(rho_lo, rho_hi, n_samples)
    s, good = scores_at(rhos)
    if not good.any():
        return None
    i, second = best_and_runner_up(s)
    best = float(s[i])
    if best < score_threshold or best - second < margin:
        return None

    # golden-section refinement between the neighbouring samples
    a = rhos[max(i - 1, 0)]
    b = rhos[min(i + 1, n_samples - 1)]
    gr = (np.sqrt(5) - 1) / 2
    c, d = b - gr * (b - a), a + gr * (b - a)
    fc, fd = scores_at([c])[0][0], scores_at([d])[0][0]
    for _ in range(refine_iterations):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = scores_at([c])[0][0]
        else:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = scores_at([d])[0][0]
    rho_best, s_best = (c, fc) if fc > fd else (d, fd)
    if s_best < best:
        rho_best, s_best = rhos[i], best
    if rho_best <= 0:
        return None
    # pixel noise mapped through the epipolar parameterisation
    var = (sigma_px * (rho_hi - rho_lo) / length) ** 2
    return TemporalMatch(DepthPoint(x, y, float(rho_best), float(var), TEMPORAL, t), float(s_best),
                         length)
