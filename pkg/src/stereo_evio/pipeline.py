"""Stereo event-based visual-inertial odometry pipeline.

A virtual clock at the tracking rate drives four stages:

* pre-processing builds the left time surface and its negative OS-TS every
  tick, plus the right time surface and the left AA map on mapping ticks;
* tracking registers the local depth map against the negative OS-TS,
  starting from the IMU-predicted pose;
* mapping runs static and temporal stereo on contour points sampled from the
  AA map and fuses them into a local depth map re-anchored at the newest pose;
* the back-end adds a node per mapping tick to a sliding window and refines
  velocities and IMU biases, which feed the next motion priors.

:func:`run_pipeline` executes the stages in lockstep on one thread (byte-for-
byte reproducible) or as four threads joined by bounded queues.
"""
from __future__ import annotations

import collections
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io
from .backend import (DIAGNOSTICS_HEADER, WindowNode, WindowState, diagnostics_line, optimize,
                      slide)
from .core import Pose, US_PER_S
from .dataset import Dataset, InputContractError, config_from_mapping
from .imu import GravityModel, ImuBias, ImuBuffer, preintegrate, predict_motion
from .mapping import (STATIC, DepthPoint, LocalDepthMap, disparity_to_inverse_depth,
                      fuse_into_map, map_from_points, propagate_map, static_stereo_match,
                      temporal_stereo_match)
from .representations import (EventHistory, build_aa, build_osts, build_time_surface,
                              sample_contour_points, split_by_gradient)
from .tracking import (GRADIENTS, DegenerateProblem, GridSurface, RegistrationProblem,
                       motion_from_poses, track)

log = logging.getLogger(__name__)


class TrackingFailure(RuntimeError):
    """Tracking stayed lost for longer than the IMU-only bridge allows."""


@dataclass(frozen=True)
class PipelineConfig:
    # clocks
    tracking_rate: float = 100.0
    mapping_rate: float = 20.0
    # representations
    ts_decay_us: int = 30_000
    region_size: int = 32
    convergence_ratio: float = 0.95
    aa_window_us: int = 100_000
    blur_size: int = 5
    blur_sigma: float = 1.0
    # mapping
    contour_points: int = 1500
    eta_threshold: float = 1.0
    block_size: int = 15
    max_disparity: int = 100
    score_threshold: float = 0.6
    distinctiveness: float = 0.1
    sigma_disparity: float = 0.5
    temporal_stereo: bool = False
    temporal_points: int = 150
    temporal_gap: int = 3
    min_epipolar_length: float = 8.0
    min_depth: float = 0.5
    max_depth: float = 20.0
    map_max_age_us: int = 500_000
    map_max_points: int = 15_000
    write_depth_maps: bool = True
    # tracking
    tracking_points: int = 2000
    huber_delta: float = 0.5
    max_iterations: int = 50
    coarse_sigma: float = 0.0
    surface_gradient: str = "sobel"
    max_mean_residual: float = 0.85
    max_bridge_us: int = 500_000
    # back-end
    backend: bool = True
    window_size: int = 5
    backend_iterations: int = 30
    accel_bias_bound: float = 1.0
    gyro_bias_bound: float = 0.2
    # execution
    queue_size: int = 4
    seed: int = 0

    def __post_init__(self):
        positive = ("tracking_rate", "mapping_rate", "ts_decay_us", "region_size",
                    "aa_window_us", "blur_size", "blur_sigma", "contour_points", "eta_threshold",
                    "block_size", "max_disparity", "sigma_disparity", "temporal_gap",
                    "min_depth", "map_max_age_us", "map_max_points", "tracking_points",
                    "huber_delta", "max_iterations", "max_mean_residual", "window_size",
                    "backend_iterations", "accel_bias_bound", "gyro_bias_bound", "queue_size")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        ratio = self.tracking_rate / self.mapping_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("tracking_rate must be an integer multiple of mapping_rate")
        if US_PER_S % round(self.tracking_rate):
            raise ValueError("tracking period must be a whole number of microseconds")
        if not 0 < self.convergence_ratio < 1:
            raise ValueError("convergence_ratio must lie in (0, 1)")
        if self.block_size % 2 == 0:
            raise ValueError("block_size must be odd")
        if not 0 <= self.distinctiveness < 2 or not -1 <= self.score_threshold <= 1:
            raise ValueError("ZNCC thresholds out of range")
        if self.max_depth <= self.min_depth:
            raise ValueError("max_depth must exceed min_depth")
        if self.temporal_points < 0 or self.min_epipolar_length < 0 or self.coarse_sigma < 0:
            raise ValueError("temporal_points, min_epipolar_length and coarse_sigma must be >= 0")
        if self.max_bridge_us < 0 or self.seed < 0:
            raise ValueError("max_bridge_us and seed must be non-negative")
        if self.window_size < 2:
            raise ValueError("window_size must be at least 2")
        if self.surface_gradient not in GRADIENTS:
            raise ValueError(f"surface_gradient must be one of {GRADIENTS}")

    @classmethod
    def from_file(cls, path=None, **overrides):
        mapping = io.read_keyvalue(path) if path is not None else {}
        return config_from_mapping(cls, mapping, **overrides)

    @property
    def tick_us(self):
        return US_PER_S // round(self.tracking_rate)

    @property
    def ticks_per_map(self):
        return int(round(self.tracking_rate / self.mapping_rate))


# --------------------------------------------------------------------------
# messages between stages (treated as immutable)
# --------------------------------------------------------------------------

@dataclass
class Frame:
    """Representations at one tick; the mapping fields are set on mapping ticks only."""

    t: int
    index: int
    ts_left: object
    negative: np.ndarray
    ts_right: object = None
    aa: object = None

    @property
    def is_mapping(self):
        return self.aa is not None


@dataclass(frozen=True)
class PoseMessage:
    t: int
    pose: Pose
    ok: bool
    iterations: int = 0
    cost0: float = np.nan
    cost: float = np.nan
    mean_residual: float = np.nan
    points: int = 0

    def csv(self):
        return (f"{self.t / US_PER_S:.6f},{int(self.ok)},{self.iterations},{self.cost0:.9g},"
                f"{self.cost:.9g},{self.mean_residual:.9g},{self.points}\n")


TRACKING_HEADER = "t,ok,iters,cost0,cost,mean_residual,points\n"


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

class Preprocessor:
    def __init__(self, ds: Dataset, cfg: PipelineConfig):
        self.ds, self.cfg = ds, cfg
        self.hist_l = EventHistory(ds.rig.width, ds.rig.height)
        self.hist_r = EventHistory(ds.rig.width, ds.rig.height)
        self.t_l = self.t_r = -1

    def _advance(self, hist, stream, t_from, t):
        hist.update(stream.window(t_from, t))

    def frame(self, t, index, mapping) -> Frame:
        cfg = self.cfg
        self._advance(self.hist_l, self.ds.events_left, self.t_l, t)
        self.t_l = t
        ts_l = build_time_surface(self.hist_l.last, t, cfg.ts_decay_us)
        neg = build_osts(ts_l, cfg.blur_size, cfg.blur_sigma).negative
        frame = Frame(t, index, ts_l, neg)
        if mapping:
            self._advance(self.hist_r, self.ds.events_right, self.t_r, t)
            self.t_r = t
            frame.ts_right = build_time_surface(self.hist_r.last, t, cfg.ts_decay_us)
            frame.aa = build_aa(self.ds.events_left.window(t - cfg.aa_window_us, t),
                                region_size=cfg.region_size,
                                convergence_ratio=cfg.convergence_ratio, t_ref=t)
        return frame


def imu_predict(imu: ImuBuffer, pose: Pose, v, bias: ImuBias, t0, t1,
                gravity: GravityModel = GravityModel()):
    if t1 == t0:
        return pose, np.asarray(v, dtype=float)
    pre = preintegrate(imu.between(t0, t1), bias)
    return predict_motion(pose, v, pre, gravity)


class Tracker:
    """Holds the current state estimate; the map and back-end snapshots are swapped in."""

    def __init__(self, ds: Dataset, cfg: PipelineConfig, depth_map: LocalDepthMap):
        self.ds, self.cfg = ds, cfg
        self.cam = ds.rig.left
        s = ds.initial
        self.t, self.pose, self.v, self.bias = s.t, s.pose, np.array(s.velocity), s.bias
        self.map = depth_map
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.lost_since = None
        self.history = collections.OrderedDict({s.t: s.pose})
        self._lock = threading.Lock()
        self._pending = None

    def set_map(self, depth_map):
        with self._lock:
            self.map = depth_map

    def set_backend_state(self, t, v, bias):
        with self._lock:
            self._pending = (t, np.array(v), bias)

    def _apply_backend(self):
        with self._lock:
            pending, self._pending = self._pending, None
        if pending is None:
            return
        t_b, v, bias = pending
        pose_b = self.history.get(t_b)
        if pose_b is None:
            return
        # re-propagate the corrected velocity from the node up to now
        _, self.v = imu_predict(self.ds.imu, pose_b, v, bias, t_b, self.t)
        self.bias = bias

    def step(self, frame: Frame) -> PoseMessage:
        cfg = self.cfg
        self._apply_backend()
        pose_pred, v_pred = imu_predict(self.ds.imu, self.pose, self.v, self.bias, self.t, frame.t)
        with self._lock:
            depth_map = self.map
        msg = self._register(frame, depth_map, pose_pred)
        if msg.ok:
            self.lost_since = None
        else:
            msg = PoseMessage(frame.t, pose_pred, False, msg.iterations, msg.cost0, msg.cost,
                              msg.mean_residual, msg.points)
            if self.lost_since is None:
                self.lost_since = self.t
            log.info("tracking lost at t=%.3f s, bridging with the IMU", frame.t / US_PER_S)
            if frame.t - self.lost_since > cfg.max_bridge_us:
                raise TrackingFailure(
                    f"tracking lost for more than {cfg.max_bridge_us / 1e3:.0f} ms "
                    f"(since t={self.lost_since / US_PER_S:.3f} s)")
        self.t, self.pose, self.v = frame.t, msg.pose, v_pred
        self.history[frame.t] = msg.pose
        while len(self.history) > 4 * cfg.window_size * cfg.ticks_per_map:
            self.history.popitem(last=False)
        return msg

    def _register(self, frame, depth_map, pose_pred) -> PoseMessage:
        cfg = self.cfg
        surface = GridSurface(frame.negative, gradient=cfg.surface_gradient)
        problem = RegistrationProblem.from_map(depth_map, surface, self.cam,
                                               cfg.tracking_points, self.rng)
        theta = motion_from_poses(depth_map.ref_pose, pose_pred)
        try:
            if cfg.coarse_sigma > 0:
                from scipy import ndimage
                blurred = ndimage.gaussian_filter(frame.negative, cfg.coarse_sigma, mode="nearest")
                coarse = RegistrationProblem(problem.uv, problem.rho,
                                             GridSurface(blurred, gradient=cfg.surface_gradient),
                                             self.cam, problem.ref_pose)
                theta = track(coarse, theta, cfg.max_iterations, cfg.huber_delta).theta
            res = track(problem, theta, cfg.max_iterations, cfg.huber_delta)
        except DegenerateProblem:
            return PoseMessage(frame.t, pose_pred, False, points=len(problem))
        mean_r = res.objective / len(problem)
        pose = res.pose(depth_map.ref_pose)
        ok = (res.converged and np.isfinite(res.cost) and mean_r <= cfg.max_mean_residual
              and np.all(np.isfinite(pose.p)))
        return PoseMessage(frame.t, pose, bool(ok), res.iterations, res.cost0, res.cost, mean_r,
                           len(problem))


@dataclass(frozen=True)
class _KeyFrame:
    t: int
    pose: Pose
    aa: np.ndarray


class Mapper:
    def __init__(self, ds: Dataset, cfg: PipelineConfig, out_dir: Optional[Path] = None):
        self.ds, self.cfg = ds, cfg
        self.rig = ds.rig
        self.cam = ds.rig.left
        self.rng = np.random.default_rng([cfg.seed, 2])
        self.map: Optional[LocalDepthMap] = None
        self.keyframes = collections.deque(maxlen=cfg.temporal_gap + 1)
        self.depth_dir = None
        if out_dir is not None and cfg.write_depth_maps:
            self.depth_dir = io.ensure_dir(Path(out_dir) / "depth")
        self.stats = []

    def _static_points(self, frame, points):
        cfg = self.cfg
        out = []
        for x, y in points:
            m = static_stereo_match((x, y), frame.ts_left.values, frame.ts_right.values,
                                    (1, cfg.max_disparity), cfg.block_size, cfg.score_threshold,
                                    cfg.distinctiveness)
            if m is None or m.disparity <= 0:
                continue
            rho, var = disparity_to_inverse_depth(m.disparity, self.rig, cfg.sigma_disparity)
            if 1.0 / cfg.max_depth <= rho <= 1.0 / cfg.min_depth:
                out.append(DepthPoint(float(x), float(y), rho, var, STATIC, frame.t))
        return out

    def _temporal_points(self, frame, pose, points):
        cfg = self.cfg
        if not cfg.temporal_stereo or len(self.keyframes) <= cfg.temporal_gap or not len(points):
            return []
        prev = self.keyframes[0]
        T_curr_prev = pose.inverse() @ prev.pose
        aa_curr = frame.aa.counts.astype(float)
        rho_range = (1.0 / cfg.max_depth, 1.0 / cfg.min_depth)
        if len(points) > cfg.temporal_points:
            pick = np.sort(self.rng.choice(len(points), cfg.temporal_points, replace=False))
            points = points[pick]
        out = []
        for x, y in points:
            m = temporal_stereo_match((x, y), aa_curr, prev.aa, T_curr_prev, rho_range, self.cam,
                                      cfg.block_size, score_threshold=cfg.score_threshold,
                                      margin=cfg.distinctiveness, sigma_px=cfg.sigma_disparity,
                                      t=frame.t, min_epipolar_length=cfg.min_epipolar_length)
            if m is not None:
                out.append(m.point)
        return out

    def step(self, frame: Frame, pose: Pose) -> LocalDepthMap:
        cfg = self.cfg
        pts = sample_contour_points(frame.aa, cfg.contour_points, self.rng)
        static_set, temporal_set = split_by_gradient(pts, frame.ts_left, cfg.eta_threshold)
        new_static = self._static_points(frame, static_set)
        self.keyframes.append(_KeyFrame(frame.t, pose, frame.aa.counts.astype(float)))
        new_temporal = self._temporal_points(frame, pose, temporal_set)
        W, H = self.rig.width, self.rig.height
        if self.map is None:
            depth_map = map_from_points(pose, W, H, new_static + new_temporal, frame.t)
        else:
            old = propagate_map(self.map, pose.inverse() @ self.map.ref_pose, self.cam,
                                new_ref_pose=pose, t_ref=frame.t)
            old = old.subset(frame.t - old.t <= cfg.map_max_age_us)
            depth_map = fuse_into_map(old, new_static + new_temporal)
        if len(depth_map) > cfg.map_max_points:
            keep = np.argsort(-depth_map.t, kind="stable")[:cfg.map_max_points]
            mask = np.zeros(len(depth_map), dtype=bool)
            mask[keep] = True
            depth_map = depth_map.subset(mask)
        self.map = depth_map
        self.stats.append((frame.t, len(static_set), len(new_static), len(temporal_set),
                           len(new_temporal), len(depth_map)))
        if self.depth_dir is not None:
            write_depth_map(self.depth_dir, depth_map)
        return depth_map


def write_depth_map(directory, depth_map: LocalDepthMap):
    """``<t_us>.pfm`` inverse-depth image plus a ``<t_us>.txt`` sidecar with the reference pose."""
    stem = Path(directory) / f"{depth_map.t_ref:012d}"
    io.write_pfm(stem.with_suffix(".pfm"), depth_map.inverse_depth_image())
    io.write_keyvalue(stem.with_suffix(".txt"),
                      {"t_us": depth_map.t_ref, "position": list(map(float, depth_map.ref_pose.p)),
                       "orientation_wxyz": list(map(float, depth_map.ref_pose.q)),
                       "points": len(depth_map)})


class Backend:
    def __init__(self, ds: Dataset, cfg: PipelineConfig):
        self.ds, self.cfg = ds, cfg
        s = ds.initial
        self.state = slide(WindowState((), ()), WindowNode(s.pose, s.t, s.velocity, s.bias), None,
                           cfg.window_size)
        self.lines: List[str] = []

    def step(self, t, pose: Pose):
        last = self.state.nodes[-1]
        pre = preintegrate(self.ds.imu.between(last.t, t), last.bias)
        self.state = slide(self.state, WindowNode(pose, t), pre, self.cfg.window_size)
        newest = self.state.nodes[-1]
        # a partial window leaves the biases unconstrained; wait until it fills
        if len(self.state.nodes) < self.cfg.window_size:
            return newest.v, newest.bias
        res = optimize(self.state, self.cfg.backend_iterations,
                       accel_bound=self.cfg.accel_bias_bound, gyro_bound=self.cfg.gyro_bias_bound)
        self.state = res.state
        self.lines.append(diagnostics_line(t, res))
        newest = self.state.nodes[-1]
        return newest.v, newest.bias


# --------------------------------------------------------------------------
# runners
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    stamps: List[int] = field(default_factory=list)
    poses: List[Pose] = field(default_factory=list)
    messages: List[PoseMessage] = field(default_factory=list)
    backend_lines: List[str] = field(default_factory=list)
    map_stats: list = field(default_factory=list)
    dropped_frames: int = 0

    @property
    def lost_ticks(self):
        return sum(not m.ok for m in self.messages)


def check_dataset(ds: Dataset):
    if ds.imu is None or len(ds.imu) < 2:
        raise InputContractError("dataset has no IMU stream; this is a visual-inertial system "
                                 "and needs imu.csv")
    if len(ds.events_left) == 0 or len(ds.events_right) == 0:
        raise InputContractError("dataset has no events")
    if not ds.imu.t[0] <= ds.initial.t < ds.imu.t[-1]:
        raise InputContractError("the initial state time lies outside the IMU stream")


def _tick_times(ds: Dataset, cfg: PipelineConfig):
    t0 = ds.initial.t
    t_end = min(int(ds.imu.t[-1]), ds.t_end)
    n = (t_end - t0) // cfg.tick_us
    return [t0 + k * cfg.tick_us for k in range(1, n + 1)]


def _bootstrap(ds, cfg, pre, mapper):
    """Static-stereo map at the initial state's time and pose."""
    frame0 = pre.frame(ds.initial.t, 0, True)
    mapper.keyframes.append(_KeyFrame(frame0.t, ds.initial.pose, frame0.aa.counts.astype(float)))
    pts = sample_contour_points(frame0.aa, cfg.contour_points, mapper.rng)
    static_set, _ = split_by_gradient(pts, frame0.ts_left, cfg.eta_threshold)
    depth_map = map_from_points(ds.initial.pose, ds.rig.width, ds.rig.height,
                                mapper._static_points(frame0, static_set), frame0.t)
    mapper.map = depth_map
    if mapper.depth_dir is not None:
        write_depth_map(mapper.depth_dir, depth_map)
    if len(depth_map) < 50:
        raise TrackingFailure(f"bootstrap map has only {len(depth_map)} points")
    return depth_map


def run_pipeline(ds: Dataset, cfg: PipelineConfig, out_dir=None, single_thread=True) -> RunResult:
    """Estimate the trajectory of ``ds``; optionally write outputs to ``out_dir``.

    Raises :class:`InputContractError` for unusable inputs and
    :class:`TrackingFailure` when tracking cannot be bridged.
    """
    check_dataset(ds)
    out_dir = None if out_dir is None else io.ensure_dir(out_dir)
    pre = Preprocessor(ds, cfg)
    mapper = Mapper(ds, cfg, out_dir)
    depth_map = _bootstrap(ds, cfg, pre, mapper)
    tracker = Tracker(ds, cfg, depth_map)
    backend = Backend(ds, cfg) if cfg.backend else None
    result = RunResult([ds.initial.t], [ds.initial.pose])
    try:
        if single_thread:
            _run_lockstep(ds, cfg, pre, tracker, mapper, backend, result)
        else:
            _run_threaded(ds, cfg, pre, tracker, mapper, backend, result)
    finally:
        result.map_stats = mapper.stats
        if backend is not None:
            result.backend_lines = backend.lines
        if out_dir is not None:
            write_outputs(out_dir, result)
    return result


def _run_lockstep(ds, cfg, pre, tracker, mapper, backend, result):
    for k, t in enumerate(_tick_times(ds, cfg), 1):
        frame = pre.frame(t, k, k % cfg.ticks_per_map == 0)
        msg = tracker.step(frame)
        result.messages.append(msg)
        result.stamps.append(t)
        result.poses.append(msg.pose)
        if frame.is_mapping:
            tracker.set_map(mapper.step(frame, msg.pose))
            if backend is not None:
                tracker.set_backend_state(t, *backend.step(t, msg.pose))


class FrameQueue:
    """Bounded FIFO whose producer evicts the oldest droppable item when full."""

    def __init__(self, maxsize):
        self.items = collections.deque()
        self.maxsize = maxsize
        self.cond = threading.Condition()
        self.dropped = 0

    def put(self, item, droppable):
        with self.cond:
            while len(self.items) >= self.maxsize:
                victim = next((i for i, (_, d) in enumerate(self.items) if d), None)
                if victim is not None:
                    del self.items[victim]
                    self.dropped += 1
                    break
                self.cond.wait(0.05)
            self.items.append((item, droppable))
            self.cond.notify_all()

    def get(self):
        with self.cond:
            while not self.items:
                self.cond.wait(0.05)
            item, _ = self.items.popleft()
            self.cond.notify_all()
            return item


_STOP = object()


def _run_threaded(ds, cfg, pre, tracker, mapper, backend, result):
    import queue

    frames = FrameQueue(cfg.queue_size)
    to_mapper = queue.Queue(maxsize=cfg.queue_size)
    to_backend = queue.Queue()
    errors = []
    abort = threading.Event()

    def guarded(fn):
        def body():
            try:
                fn()
            except BaseException as exc:  # surfaced in the caller
                errors.append(exc)
                abort.set()
        return body

    def preprocessing():
        for k, t in enumerate(_tick_times(ds, cfg), 1):
            if abort.is_set():
                break
            mapping = k % cfg.ticks_per_map == 0
            frames.put(pre.frame(t, k, mapping), droppable=not mapping)
        frames.put(_STOP, droppable=False)

    def tracking():
        while True:
            frame = frames.get()
            if frame is _STOP or abort.is_set():
                break
            msg = tracker.step(frame)
            result.messages.append(msg)
            result.stamps.append(frame.t)
            result.poses.append(msg.pose)
            if frame.is_mapping:
                to_mapper.put((frame, msg.pose))
                to_backend.put((frame.t, msg.pose))
        to_mapper.put(_STOP)
        to_backend.put(_STOP)

    def mapping():
        while True:
            item = to_mapper.get()
            if item is _STOP:
                break
            if not abort.is_set():
                tracker.set_map(mapper.step(*item))

    def refining():
        while True:
            item = to_backend.get()
            if item is _STOP:
                break
            if backend is not None and not abort.is_set():
                t, pose = item
                tracker.set_backend_state(t, *backend.step(t, pose))

    threads = [threading.Thread(target=guarded(f), name=f.__name__, daemon=True)
               for f in (preprocessing, tracking, mapping, refining)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    result.dropped_frames = frames.dropped
    if errors:
        raise errors[0]


def write_outputs(out_dir, result: RunResult):
    out_dir = Path(out_dir)
    io.write_tum(out_dir / "trajectory.txt", result.stamps, result.poses)
    with open(out_dir / "tracking.csv", "w") as f:
        f.write(TRACKING_HEADER)
        f.writelines(m.csv() for m in result.messages)
    with open(out_dir / "backend.csv", "w") as f:
        f.write(DIAGNOSTICS_HEADER)
        f.writelines(result.backend_lines)
    with open(out_dir / "mapping.csv", "w") as f:
        f.write("t,static_candidates,static_points,temporal_candidates,temporal_points,map_points\n")
        for t, *rest in result.map_stats:
            f.write(f"{t / US_PER_S:.6f}," + ",".join(str(v) for v in rest) + "\n")
