"""Image-like event representations.

Time surfaces (TS), adaptive-accumulation (AA) maps built from per-region
event activity, offset-free smoothed time surfaces (OS-TS), and the contour
point sampler that feeds mapping.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import EventStream, US_PER_S
from . import io

NO_EVENT = -1
DEFAULT_DECAY_US = 30_000
DEFAULT_REGION_SIZE = 32
CONVERGENCE_RATIO = 0.95


# --------------------------------------------------------------------------
# event activity
# --------------------------------------------------------------------------

def update_event_activity(a_prev, dt):
    """One step of the activity recurrence.

    ``beta = 1 / (1 + a_prev * dt)`` and ``a = beta * a_prev + 1``;
    ``dt`` is the time since the previous event in seconds.
    """
    if a_prev < 0 or dt < 0:
        raise ValueError("activity and interval must be non-negative")
    beta = 1.0 / (1.0 + a_prev * dt)
    return beta * a_prev + 1.0, beta


def converged_activity(b):
    """Fixed point ``(1 + sqrt(1 + 4/b)) / 2`` of the recurrence for a constant interval ``b`` (s)."""
    if not b > 0:
        raise ValueError("mean inter-event interval must be positive")
    return 0.5 * (1.0 + np.sqrt(1.0 + 4.0 / b))


def activity_trace(intervals, a0=0.0):
    """Activity after each event for a sequence of inter-event intervals (s)."""
    out = np.empty(len(intervals))
    a = a0
    for i, dt in enumerate(intervals):
        a = a / (1.0 + a * dt) + 1.0
        out[i] = a
    return out


# --------------------------------------------------------------------------
# adaptive accumulation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionGrid:
    """Per-region bookkeeping of one AA build.

    Arrays are indexed by region id ``row * n_cols + col``.
    """

    region_size: int
    n_rows: int
    n_cols: int
    activity: np.ndarray
    target: np.ndarray
    converged: np.ndarray
    mean_interval: np.ndarray
    events_used: np.ndarray
    events_available: np.ndarray

    @property
    def n_regions(self):
        return self.n_rows * self.n_cols

    def region_of(self, x, y):
        return (np.asarray(y) // self.region_size) * self.n_cols + np.asarray(x) // self.region_size


@dataclass(frozen=True)
class AAMap:
    counts: np.ndarray
    regions: RegionGrid
    t_ref: int

    @property
    def shape(self):
        return self.counts.shape


def region_layout(width, height, region_size=DEFAULT_REGION_SIZE):
    return -(-height // region_size), -(-width // region_size)


def build_aa(events: EventStream, width=None, height=None, region_size=DEFAULT_REGION_SIZE,
             convergence_ratio=CONVERGENCE_RATIO, t_ref=None) -> AAMap:
    """Adaptive accumulation of ``events`` into a count image.

    Each square region estimates its mean inter-event interval from the
    slice, derives the converged activity, then walks its events from the
    newest backwards, counting them and updating the activity until it
    reaches ``convergence_ratio`` of the converged value.  Walking backwards
    anchors the map at ``t_ref`` (the end of the slice).  Polarity is ignored.
    """
    width = events.width if width is None else width
    height = events.height if height is None else height
    n_rows, n_cols = region_layout(width, height, region_size)
    n_reg = n_rows * n_cols
    counts = np.zeros((height, width), dtype=np.int64)
    activity = np.zeros(n_reg)
    target = np.full(n_reg, np.nan)
    converged = np.zeros(n_reg, dtype=bool)
    mean_interval = np.full(n_reg, np.nan)
    used = np.zeros(n_reg, dtype=np.int64)

    if t_ref is None:
        t_ref = int(events.t[-1]) if len(events) else 0

    reg = (events.y // region_size) * n_cols + events.x // region_size
    available = np.bincount(reg, minlength=n_reg).astype(np.int64)
    order = np.argsort(reg, kind="stable")
    starts = np.concatenate([[0], np.cumsum(available)])
    ts_all = events.t[order]
    xs_all = events.x[order]
    ys_all = events.y[order]

    for j in np.nonzero(available >= 2)[0]:
        lo, hi = starts[j], starts[j + 1]
        ts = ts_all[lo:hi]
        n = hi - lo
        # timestamps are µs integers; a zero span still means "at least 1 µs apart"
        b = max(int(ts[-1] - ts[0]), n - 1) / (n - 1) / US_PER_S
        a_conv = converged_activity(b)
        stop = convergence_ratio * a_conv
        mean_interval[j] = b
        target[j] = a_conv

        tf = ts.astype(np.float64) / US_PER_S
        a = 0.0
        t_prev = tf[-1]
        k = n - 1
        while k >= 0:
            a = a / (1.0 + a * (t_prev - tf[k])) + 1.0
            t_prev = tf[k]
            k -= 1
            if a >= stop:
                converged[j] = True
                break
        m = n - 1 - k
        sel = slice(lo + n - m, hi)
        np.add.at(counts, (ys_all[sel], xs_all[sel]), 1)
        activity[j] = a
        used[j] = m

    grid = RegionGrid(region_size, n_rows, n_cols, activity, target, converged, mean_interval,
                      used, available)
    return AAMap(counts, grid, int(t_ref))


# --------------------------------------------------------------------------
# time surfaces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeSurface:
    values: np.ndarray
    t_ref: int
    decay: int

    @property
    def negative(self):
        return 1.0 - self.values


class EventHistory:
    """Per-pixel timestamp of the most recent event, updated incrementally."""

    def __init__(self, width, height):
        self.width, self.height = width, height
        self.last = np.full((height, width), NO_EVENT, dtype=np.int64)

    def update(self, events: EventStream):
        if len(events):
            flat = self.last.reshape(-1)
            np.maximum.at(flat, events.y.astype(np.int64) * self.width + events.x, events.t)
        return self

    def snapshot(self):
        return self.last.copy()


def last_event_times(events: EventStream, width=None, height=None):
    h = EventHistory(events.width if width is None else width,
                     events.height if height is None else height)
    return h.update(events).last


def build_time_surface(last_times, t_ref, decay=DEFAULT_DECAY_US) -> TimeSurface:
    """``exp(-(t_ref - t_last)/decay)`` where a pixel has fired, 0 elsewhere."""
    last_times = np.asarray(last_times)
    fired = last_times >= 0
    if np.any(last_times[fired] > t_ref):
        raise ValueError("event history extends past the reference time")
    values = np.zeros(last_times.shape)
    values[fired] = np.exp(-(t_ref - last_times[fired]) / float(decay))
    return TimeSurface(values, int(t_ref), int(decay))


def gaussian_kernel(size=5, sigma=1.0):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur(image, size=5, sigma=1.0):
    return ndimage.convolve(np.asarray(image, dtype=float), gaussian_kernel(size, sigma),
                            mode="mirror")


@dataclass(frozen=True)
class OSTS:
    values: np.ndarray
    t_ref: int

    @property
    def negative(self):
        return 1.0 - self.values


def build_osts(ts: TimeSurface, size=5, sigma=1.0) -> OSTS:
    """Offset-free smoothed TS: blurred values only where the TS is zero."""
    blurred = gaussian_blur(ts.values, size, sigma)
    return OSTS(np.where(ts.values == 0, blurred, ts.values), ts.t_ref)


def blurred_surface(ts: TimeSurface, size=5, sigma=1.0) -> OSTS:
    """Plain Gaussian-blurred TS, packaged like an OS-TS for comparisons."""
    return OSTS(gaussian_blur(ts.values, size, sigma), ts.t_ref)


# --------------------------------------------------------------------------
# contour points
# --------------------------------------------------------------------------

def _apportion(mass, n):
    """Largest-remainder split of ``n`` proportional to ``mass``."""
    total = mass.sum()
    if total <= 0:
        return np.zeros_like(mass, dtype=np.int64)
    share = n * mass / total
    quota = np.floor(share).astype(np.int64)
    rest = n - quota.sum()
    if rest > 0:
        order = np.argsort(-(share - quota), kind="stable")
        quota[order[:rest]] += 1
    return quota


def sample_contour_points(aa: AAMap, n, rng=None):
    """Draw up to ``n`` distinct pixels, weighted by AA counts, region by region.

    Returns an (m, 2) integer array of ``(x, y)`` with ``m <= n``.
    """
    if n <= 0:
        raise ValueError("sample size must be positive")
    rng = np.random.default_rng(rng)
    counts = aa.counts
    h, w = counts.shape
    ys, xs = np.nonzero(counts)
    if len(xs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    reg = aa.regions.region_of(xs, ys)
    weights = counts[ys, xs].astype(float)
    n_reg = aa.regions.n_regions
    mass = np.bincount(reg, weights=weights, minlength=n_reg)
    quota = _apportion(mass, n)

    order = np.argsort(reg, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(reg, minlength=n_reg))])
    picked = []
    for j in np.nonzero(quota)[0]:
        idx = order[bounds[j]:bounds[j + 1]]
        k = min(int(quota[j]), len(idx))
        p = weights[idx] / weights[idx].sum()
        picked.append(rng.choice(idx, size=k, replace=False, p=p))
    sel = np.concatenate(picked) if picked else np.zeros(0, dtype=np.int64)
    sel.sort()
    return np.column_stack([xs[sel], ys[sel]]).astype(np.int64)


def sample_recent_events(events: EventStream, n, rng=None):
    """Baseline sampler: uniform over the distinct pixels of the given events."""
    rng = np.random.default_rng(rng)
    if len(events) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    flat = np.unique(events.y.astype(np.int64) * events.width + events.x)
    k = min(n, len(flat))
    pick = rng.choice(flat, size=k, replace=False)
    pick.sort()
    return np.column_stack([pick % events.width, pick // events.width]).astype(np.int64)


def sobel_gradients(image):
    """Sobel derivatives normalised by 1/8 (a unit-slope ramp gives 1)."""
    image = np.asarray(image, dtype=float)
    gx = ndimage.sobel(image, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(image, axis=0, mode="nearest") / 8.0
    return gx, gy


def split_by_gradient(points, ts: TimeSurface, eta_threshold=1.0, gradients=None):
    """Partition points by the vertical/horizontal gradient ratio of the TS.

    Points with ``|gy| / |gx| < eta_threshold`` (mostly vertical structure)
    go to the static set; the rest, including exact ties and flat patches,
    go to the temporal set.  Border pixels have no Sobel support and are
    dropped.
    """
    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    h, w = ts.values.shape
    gx, gy = sobel_gradients(ts.values) if gradients is None else gradients
    x, y = points[:, 0], points[:, 1]
    inner = (x > 0) & (x < w - 1) & (y > 0) & (y < h - 1)
    points = points[inner]
    ax = np.abs(gx[points[:, 1], points[:, 0]])
    ay = np.abs(gy[points[:, 1], points[:, 0]])
    # multiplicative form of ay / ax < eta: no division, ties are not "<"
    static = ay < eta_threshold * ax
    return points[static], points[~static]


def gradient_ratio(points, ts: TimeSurface, eps=1e-6):
    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    gx, gy = sobel_gradients(ts.values)
    return np.abs(gy[points[:, 1], points[:, 0]]) / (np.abs(gx[points[:, 1], points[:, 0]]) + eps)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def export_aa(directory, aa: AAMap, prefix="aa"):
    path = Path(directory) / f"{prefix}_{aa.t_ref:012d}.pgm"
    io.write_pgm16(path, aa.counts)
    return path


def export_surface(directory, surface, prefix="ts"):
    path = Path(directory) / f"{prefix}_{surface.t_ref:012d}.pfm"
    io.write_pfm(path, surface.values)
    return path
