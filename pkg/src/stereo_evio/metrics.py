"""Trajectory accuracy: absolute (after rigid alignment) and relative pose errors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Pose, quat_conjugate, quat_log, quat_multiply

RPE_DELTA = 1.0


class AssociationError(ValueError):
    pass


class DegenerateAlignment(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped poses; ``t`` in seconds, strictly increasing."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        q = np.asarray(self.q, dtype=float).reshape(-1, 4)
        if not (len(t) == len(p) == len(q)):
            raise ValueError("trajectory columns must have equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_poses(cls, t, poses: Sequence[Pose]):
        poses = list(poses)
        return cls(t, np.array([x.p for x in poses]).reshape(-1, 3),
                   np.array([x.q for x in poses]).reshape(-1, 4))

    @classmethod
    def from_tum(cls, t_us, poses):
        return cls.from_poses(np.asarray(t_us, dtype=float) / 1e6, poses)

    def __len__(self):
        return len(self.t)

    def pose(self, i) -> Pose:
        return Pose(self.q[i], self.p[i])

    def poses(self):
        return [self.pose(i) for i in range(len(self))]

    def transformed(self, T: Pose) -> "Trajectory":
        """Every pose left-multiplied by ``T`` (a change of world frame)."""
        return Trajectory.from_poses(self.t, [T @ x for x in self.poses()])

    def subset(self, idx):
        return Trajectory(self.t[idx], self.p[idx], self.q[idx])

    def length(self):
        return float(np.linalg.norm(np.diff(self.p, axis=0), axis=1).sum())


def associate(a: Trajectory, b: Trajectory, max_dt=0.01, min_pairs=3):
    """Nearest-timestamp pairs ``(ia, ib)`` within ``max_dt`` seconds.

    Each sample of ``b`` is used at most once.
    """
    if len(a) == 0 or len(b) == 0:
        raise AssociationError("cannot associate an empty trajectory")
    j = np.searchsorted(b.t, a.t)
    lo = np.clip(j - 1, 0, len(b) - 1)
    hi = np.clip(j, 0, len(b) - 1)
    pick = np.where(np.abs(b.t[lo] - a.t) <= np.abs(b.t[hi] - a.t), lo, hi)
    ok = np.abs(b.t[pick] - a.t) <= max_dt + 1e-12
    ia = np.nonzero(ok)[0]
    ib = pick[ok]
    # keep the closest sample of a for each b
    order = np.lexsort((np.abs(b.t[ib] - a.t[ia]), ib))
    ia, ib = ia[order], ib[order]
    first = np.concatenate([[True], np.diff(ib) != 0])[:len(ib)]
    ia, ib = ia[first], ib[first]
    order = np.argsort(ia)
    ia, ib = ia[order], ib[order]
    if len(ia) < min_pairs:
        raise AssociationError(f"only {len(ia)} timestamp pairs within {max_dt} s")
    return ia, ib


def align_rigid(src, dst):
    """Least-squares ``R, t`` with ``dst ~ R src + t`` (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    S = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, sv, Vt = np.linalg.svd(S)
    if sv[1] < 1e-12 * max(sv[0], 1e-300):
        raise DegenerateAlignment("positions are collinear; rigid alignment is undefined")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    return R, mu_d - R @ mu_s


def _angle(q):
    return np.linalg.norm(np.array([quat_log(x) for x in q]).reshape(-1, 3), axis=1)


def ate_rms(est: Trajectory, gt: Trajectory, max_dt=0.01, align=True):
    """(translation RMS m, rotation RMS deg) after SE(3) alignment of est onto gt."""
    ia, ib = associate(est, gt, max_dt)
    pe, pg = est.p[ia], gt.p[ib]
    if align:
        R, t = align_rigid(pe, pg)
    else:
        R, t = np.eye(3), np.zeros(3)
    d = pg - (pe @ R.T + t)
    trans = float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
    qa = Pose.from_matrix(R).q
    qe = np.array([quat_multiply(qa, q) for q in est.q[ia]])
    err = np.array([quat_multiply(quat_conjugate(g), e) for g, e in zip(gt.q[ib], qe)])
    rot = float(np.rad2deg(np.sqrt(np.mean(_angle(err) ** 2))))
    return trans, rot


def rpe_rms(est: Trajectory, gt: Trajectory, delta=RPE_DELTA, max_dt=0.01):
    """(rotation RMS deg/s, translation RMS m/s) of relative motion over ``delta`` seconds."""
    ia, ib = associate(est, gt, max_dt)
    te = est.t[ia]
    if te[-1] - te[0] < delta - 1e-9:
        raise ValueError("trajectory span is shorter than the RPE horizon")
    rot, trans = [], []
    tol = max(max_dt, 1e-9)
    for k in range(len(ia)):
        m = np.searchsorted(te, te[k] + delta - 1e-9)
        if m >= len(ia) or te[m] - te[k] > delta + tol:
            continue
        dt = te[m] - te[k]
        E_est = est.pose(ia[k]).inverse() @ est.pose(ia[m])
        E_gt = gt.pose(ib[k]).inverse() @ gt.pose(ib[m])
        E = E_gt.inverse() @ E_est
        rot.append(np.rad2deg(np.linalg.norm(quat_log(E.q))) / dt)
        trans.append(np.linalg.norm(E.p) / dt)
    if not rot:
        raise ValueError("no pose pair spans the RPE horizon")
    return float(np.sqrt(np.mean(np.square(rot)))), float(np.sqrt(np.mean(np.square(trans))))


@dataclass(frozen=True)
class MetricsReport:
    ate_m: float
    are_deg: float
    rpe_deg_s: float
    rpe_m_s: float
    pairs: int
    length_m: float

    def text(self):
        return (f"pairs            {self.pairs}\n"
                f"gt length (m)    {self.length_m:.4f}\n"
                f"ATE (m)          {self.ate_m:.6f}\n"
                f"ARE (deg)        {self.are_deg:.6f}\n"
                f"RPE rot (deg/s)  {self.rpe_deg_s:.6f}\n"
                f"RPE trans (m/s)  {self.rpe_m_s:.6f}\n")

    def csv(self):
        return ("ate_m,are_deg,rpe_deg_s,rpe_m_s,pairs,length_m\n"
                f"{self.ate_m:.9g},{self.are_deg:.9g},{self.rpe_deg_s:.9g},{self.rpe_m_s:.9g},"
                f"{self.pairs},{self.length_m:.9g}\n")


def evaluate(est: Trajectory, gt: Trajectory, delta=RPE_DELTA, max_dt=0.01) -> MetricsReport:
    ia, ib = associate(est, gt, max_dt)
    ate, are = ate_rms(est, gt, max_dt)
    span = est.t[ia][-1] - est.t[ia][0]
    if span >= delta:
        rr, rt = rpe_rms(est, gt, delta, max_dt)
    else:
        rr = rt = float("nan")
    return MetricsReport(ate, are, rr, rt, len(ia), gt.subset(ib).length())
