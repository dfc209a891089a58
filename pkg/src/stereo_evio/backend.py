"""Sliding-window refinement of velocities and IMU biases.

Poses inside the window are fixed; each consecutive node pair contributes a
15-dimensional residual (position, velocity and rotation consistency with
the pre-integrated IMU terms, plus bias random-walk differences).  The
stacked problem is solved with Levenberg-Marquardt.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import Pose, quat_conjugate, quat_exp, quat_left, quat_multiply, quat_right
from .imu import (GravityModel, ImuBias, Preintegration, correct_for_bias_delta, predict_motion)

WINDOW_SIZE = 5
NODE_DIM = 9  # v, b_a, b_g
RES_DIM = 15


@dataclass(frozen=True)
class WindowNode:
    pose: Pose
    t: int
    v: Optional[np.ndarray] = None
    bias: Optional[ImuBias] = None

    def __post_init__(self):
        if self.v is not None:
            object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3).copy())


@dataclass(frozen=True)
class WindowState:
    nodes: tuple
    preints: tuple
    gravity: GravityModel = field(default_factory=GravityModel)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "preints", tuple(self.preints))
        if len(self.nodes) and len(self.preints) != len(self.nodes) - 1:
            raise ValueError("need one pre-integration between each pair of nodes")
        for a, b in zip(self.nodes, self.nodes[1:]):
            if b.t <= a.t:
                raise ValueError("window nodes must be time ordered")
        for k, pre in enumerate(self.preints):
            if pre.t0 != self.nodes[k].t or pre.t1 != self.nodes[k + 1].t:
                raise ValueError("pre-integration does not span its node interval")

    def vector(self):
        return np.concatenate([np.concatenate([n.v, n.bias.b_a, n.bias.b_g]) for n in self.nodes])

    def with_vector(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, NODE_DIM)
        nodes = [replace(n, v=row[:3], bias=ImuBias(row[3:6], row[6:9]))
                 for n, row in zip(self.nodes, x)]
        return replace(self, nodes=tuple(nodes))


def _exp_quat_jacobian(x):
    """d quat_exp(x) / d x as a (4, 3) matrix."""
    th = np.linalg.norm(x)
    if th < 1e-4:
        dw = -0.25 * x[None, :]
        dv = 0.5 * np.eye(3) - np.outer(x, x) / 24.0
    else:
        s, c = np.sin(0.5 * th), np.cos(0.5 * th)
        dw = -0.5 * s * x[None, :] / th
        dv = s / th * np.eye(3) + (0.5 * c * th - s) / th**3 * np.outer(x, x)
    return np.vstack([dw, dv])


def _rotation_error(q_i, q_j, pre_gamma, pre: Preintegration, bg_i, with_jacobian=False):
    """``2 vec(q_i^-1 ⊗ q_j ⊗ gamma^-1)`` with gamma corrected to ``bg_i``."""
    A = quat_multiply(quat_conjugate(q_i), q_j)
    phi = pre.J_gamma_bg @ (bg_i - pre.bias.b_g)
    g0_inv = quat_conjugate(pre_gamma)
    e = quat_multiply(quat_multiply(A, quat_exp(-phi)), g0_inv)
    sign = 1.0 if e[0] >= 0 else -1.0
    r = 2.0 * sign * e[1:]
    if not with_jacobian:
        return r
    M = quat_left(A) @ quat_right(g0_inv)
    de = M @ _exp_quat_jacobian(-phi) @ (-pre.J_gamma_bg)
    return r, 2.0 * sign * de[1:]


def residual(state: WindowState, i, with_jacobian=False):
    """15-vector residual of constraint ``i`` (between nodes i and i+1).

    With ``with_jacobian`` also returns the (15, 9) blocks for node i and
    node i+1 (variable order v, b_a, b_g).
    """
    a, b = state.nodes[i], state.nodes[i + 1]
    pre = state.preints[i]
    g = state.gravity.g_w
    dt = pre.dt_total
    Ri_T = a.pose.R.T
    dba = a.bias.b_a - pre.bias.b_a
    dbg = a.bias.b_g - pre.bias.b_g
    alpha = pre.alpha + pre.J_alpha_bg @ dbg + pre.J_alpha_ba @ dba
    beta = pre.beta + pre.J_beta_bg @ dbg + pre.J_beta_ba @ dba

    r = np.empty(RES_DIM)
    r[0:3] = Ri_T @ (b.pose.p - a.pose.p + 0.5 * g * dt * dt - a.v * dt) - alpha
    r[3:6] = Ri_T @ (b.v + g * dt - a.v) - beta
    rot = _rotation_error(a.pose.q, b.pose.q, pre.gamma, pre, a.bias.b_g, with_jacobian)
    r[9:12] = b.bias.b_a - a.bias.b_a
    r[12:15] = b.bias.b_g - a.bias.b_g
    if not with_jacobian:
        r[6:9] = rot
        return r
    r[6:9], drot = rot

    Ji = np.zeros((RES_DIM, NODE_DIM))
    Jj = np.zeros((RES_DIM, NODE_DIM))
    I3 = np.eye(3)
    Ji[0:3, 0:3] = -Ri_T * dt
    Ji[0:3, 3:6] = -pre.J_alpha_ba
    Ji[0:3, 6:9] = -pre.J_alpha_bg
    Ji[3:6, 0:3] = -Ri_T
    Ji[3:6, 3:6] = -pre.J_beta_ba
    Ji[3:6, 6:9] = -pre.J_beta_bg
    Jj[3:6, 0:3] = Ri_T
    Ji[6:9, 6:9] = drot
    Ji[9:12, 3:6] = -I3
    Jj[9:12, 3:6] = I3
    Ji[12:15, 6:9] = -I3
    Jj[12:15, 6:9] = I3
    return r, Ji, Jj


def stacked(state: WindowState, with_jacobian=True):
    n = len(state.nodes)
    m = len(state.preints)
    r = np.zeros(RES_DIM * m)
    J = np.zeros((RES_DIM * m, NODE_DIM * n)) if with_jacobian else None
    for i in range(m):
        rows = slice(RES_DIM * i, RES_DIM * (i + 1))
        if with_jacobian:
            ri, Ji, Jj = residual(state, i, True)
            J[rows, NODE_DIM * i:NODE_DIM * (i + 1)] = Ji
            J[rows, NODE_DIM * (i + 1):NODE_DIM * (i + 2)] = Jj
        else:
            ri = residual(state, i)
        r[rows] = ri
    return r, J


def total_cost(state: WindowState):
    r, _ = stacked(state, with_jacobian=False)
    return float(r @ r)


@dataclass(frozen=True)
class BackendResult:
    state: WindowState
    cost0: float
    cost: float
    iterations: int
    converged: bool


def optimize(state: WindowState, max_iterations=30, lam0=1e-4, rel_tol=1e-10, step_tol=1e-8,
             accel_bound=None, gyro_bound=None) -> BackendResult:
    """Levenberg-Marquardt over all velocities and biases; poses stay fixed.

    Accepted steps never increase the cost.  On numerical failure, or when
    a bound is given and a bias leaves it, the input state is returned with
    ``converged=False``.
    """
    if len(state.nodes) < 2:
        raise ValueError("the window needs at least two nodes")
    original = state
    x = state.vector()
    r, J = stacked(state)
    cost0 = cost = float(r @ r)
    lam = lam0
    converged = False
    it = 0
    try:
        while it < max_iterations:
            it += 1
            H = J.T @ J
            grad = J.T @ r
            D = np.diag(np.maximum(np.diag(H), 1e-12))
            step = np.linalg.solve(H + lam * D, -grad)
            cand = state.with_vector(x + step)
            r_new, J_new = stacked(cand)
            c_new = float(r_new @ r_new)
            if not np.isfinite(c_new):
                raise FloatingPointError("non-finite cost")
            if c_new <= cost:
                decrease = cost - c_new
                x, state, r, J = x + step, cand, r_new, J_new
                prev, cost = cost, c_new
                lam = max(lam / 10.0, 1e-12)
                if (np.linalg.norm(step) < step_tol or decrease <= rel_tol * prev
                        or cost < 1e-30):
                    converged = True
                    break
            else:
                lam *= 10.0
                if np.linalg.norm(step) < step_tol or lam > 1e12:
                    converged = True
                    break
    except (np.linalg.LinAlgError, FloatingPointError):
        return BackendResult(original, cost0, cost0, it, False)

    if accel_bound is not None or gyro_bound is not None:
        ab = np.inf if accel_bound is None else accel_bound
        gb = np.inf if gyro_bound is None else gyro_bound
        if not all(n.bias.within_bounds(ab, gb) for n in state.nodes):
            return BackendResult(original, cost0, cost0, it, False)
    return BackendResult(state, cost0, cost, it, converged)


def slide(state: WindowState, new_node: WindowNode, new_preint: Preintegration,
          window_size=WINDOW_SIZE) -> WindowState:
    """Append a node (and the pre-integration reaching it); drop the oldest beyond the window.

    A node given without velocity or bias is initialised by IMU prediction
    from the previous node and by copying its bias.
    """
    if state.nodes and new_node.t <= state.nodes[-1].t:
        raise ValueError("new node must be later than the newest window node")
    nodes = list(state.nodes)
    preints = list(state.preints)
    if nodes:
        last = nodes[-1]
        bias = new_node.bias if new_node.bias is not None else last.bias
        v = new_node.v
        if v is None:
            pre = correct_for_bias_delta(new_preint, last.bias)
            _, v = predict_motion(last.pose, last.v, pre, state.gravity)
        new_node = replace(new_node, v=v, bias=bias)
        preints.append(new_preint)
    else:
        new_node = replace(new_node, v=np.zeros(3) if new_node.v is None else new_node.v,
                           bias=ImuBias() if new_node.bias is None else new_node.bias)
    nodes.append(new_node)
    while len(nodes) > window_size:
        nodes.pop(0)
        preints.pop(0)
    return WindowState(nodes, preints, state.gravity)


def diagnostics_line(t, result: BackendResult):
    n = result.state.nodes[-1]
    vals = [t / 1e6, result.cost0, result.cost, result.iterations, *n.bias.b_g, *n.bias.b_a, *n.v]
    return ",".join(f"{v:.9g}" if isinstance(v, float) else str(v) for v in vals) + "\n"


DIAGNOSTICS_HEADER = "t,cost0,cost,iters,bg_x,bg_y,bg_z,ba_x,ba_y,ba_z,v_x,v_y,v_z\n"
