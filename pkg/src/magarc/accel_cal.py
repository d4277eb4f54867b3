"""Accelerometer scale-factor and bias estimation from sequences of poses.

Positions ``r_j`` (relative to a window origin) and their time derivatives
constrain the corrected acceleration ``k * a_meas - beta`` through two kinds
of rows: per-axis rows ``k_x a_x - beta_x = d2r_x/dt2`` and a resultant row
``r . (k * a_meas - beta) = m`` with ``m = S S'' - v.v + S'^2`` and
``S = |r|``. The four unknowns ``(k_x, k_y, beta_x, beta_y)`` are solved by
linear least squares.

Time derivatives use three-point stencils in the interior and four-point
one-sided stencils at the ends, so they are exact for motion that is cubic
in time. ``S S'' + S'^2`` is evaluated as the second difference of
``S^2 / 2`` and ``v.v`` with the matching stencil quadratic, which keeps the
resultant row consistent with the axis rows to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTiming, SkipAccelUpdate, UnobservableCalibration

PARAMS = ("k_ax", "k_ay", "beta_ax", "beta_ay")
MIN_POSES = 5
RANK_TOL = 1e-8
MAX_COND = 1e6


def _rot2(yaw):
    """Local-to-body rotation for in-plane heading ``yaw``."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, s], [-s, c]])


@dataclass(frozen=True)
class PoseWindow:
    """Time-ordered planar poses with the accelerometer readings taken there.

    ``origin`` is the reference point for ``r_j`` (local frame). When ``yaw``
    is given, ``accel_meas_xy`` is in the body frame and the kinematic side
    of every row is rotated into the body frame pose by pose; otherwise all
    quantities share the local frame.
    """

    timestamps: np.ndarray
    xy: np.ndarray
    accel_meas_xy: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    yaw: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        acc = np.asarray(self.accel_meas_xy, dtype=float).reshape(-1, 2)
        if not (len(t) == len(xy) == len(acc)):
            raise ValueError("timestamps, xy and accel_meas_xy must have equal length")
        if len(t) < MIN_POSES:
            raise ValueError(f"a pose window needs at least {MIN_POSES} entries")
        if np.any(np.diff(t) <= 0):
            raise DegenerateTiming("pose timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "accel_meas_xy", acc)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if self.yaw is not None:
            yaw = np.asarray(self.yaw, dtype=float).reshape(-1)
            if len(yaw) != len(t):
                raise ValueError("yaw must match the number of poses")
            object.__setattr__(self, "yaw", yaw)

    def __len__(self):
        return len(self.timestamps)


@dataclass(frozen=True)
class ArcKinematics:
    t: np.ndarray
    r: np.ndarray  # (n, 2) position relative to the window origin
    s: np.ndarray  # cumulative path length
    s_dot: np.ndarray
    s_ddot: np.ndarray
    v: np.ndarray  # (n, 2)
    a: np.ndarray  # (n, 2)
    rho: np.ndarray  # |r|
    m: np.ndarray  # resultant right-hand side


@dataclass(frozen=True)
class CalibrationEstimate:
    k_bar: np.ndarray
    beta_bar: np.ndarray
    residual_rms: float
    n_rows: int
    status: str = "full"  # "full" or "bias_only"

    def corrected(self, accel_meas_xy):
        return self.k_bar * np.asarray(accel_meas_xy, dtype=float) - self.beta_bar


def _stencil_weights(offsets, order):
    """Finite-difference weights for derivative ``order`` at offset 0."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    vander = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(vander, rhs)


def _second_difference_stencils(t):
    n = len(t)
    out = []
    for j in range(n):
        if j == 0:
            idx = np.arange(0, 4)
        elif j == n - 1:
            idx = np.arange(n - 4, n)
        else:
            idx = np.array([j - 1, j, j + 1])
        out.append((idx, _stencil_weights(t[idx] - t[j], 2)))
    return out


def arc_kinematics(window: PoseWindow) -> ArcKinematics:
    t = window.timestamps
    r = window.xy - np.asarray(window.origin)
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(window.xy, axis=0).T))])
    s_dot = np.gradient(s, t, edge_order=2)
    v = np.gradient(r, t, axis=0, edge_order=2)
    stencils = _second_difference_stencils(t)
    s_ddot = np.array([w @ s[idx] for idx, w in stencils])
    a = np.array([w @ r[idx] for idx, w in stencils])
    half_sq = 0.5 * np.einsum("ij,ij->i", r, r)
    m = np.empty(len(t))
    for j, (idx, w) in enumerate(stencils):
        # S S'' + S'^2 as one second difference of S^2/2, v.v as its stencil quadratic
        d = r[idx] - r[j]
        vv = 0.5 * w @ np.einsum("ij,ij->i", d, d)
        m[j] = w @ half_sq[idx] - vv
    return ArcKinematics(t, r, s, s_dot, s_ddot, v, a, np.hypot(r[:, 0], r[:, 1]), m)


def build_lsq(window: PoseWindow, kin: ArcKinematics | None = None):
    """Design matrix (3n x 4) and right-hand side for ``(k_x, k_y, beta_x, beta_y)``.

    Rows are ordered resultant, x-axis, y-axis.
    """
    kin = arc_kinematics(window) if kin is None else kin
    n = len(window)
    acc = window.accel_meas_xy
    r, a = kin.r, kin.a
    if window.yaw is not None:
        rot = np.array([_rot2(y) for y in window.yaw])
        r = np.einsum("nij,nj->ni", rot, r)
        a = np.einsum("nij,nj->ni", rot, a)
    zeros, ones = np.zeros(n), np.ones(n)
    resultant = np.column_stack([r[:, 0] * acc[:, 0], r[:, 1] * acc[:, 1], -r[:, 0], -r[:, 1]])
    x_rows = np.column_stack([acc[:, 0], zeros, -ones, zeros])
    y_rows = np.column_stack([zeros, acc[:, 1], zeros, -ones])
    design = np.vstack([resultant, x_rows, y_rows])
    rhs = np.concatenate([kin.m, a[:, 0], a[:, 1]])
    return design, rhs


def _stack(windows, normalize=False):
    if isinstance(windows, PoseWindow):
        windows = [windows]
    designs, rhss = [], []
    for w in windows:
        design, rhs = build_lsq(w)
        if normalize:
            # resultant rows in m^2/s^2 -> m/s^2, comparable with the axis rows
            scale = np.ones(len(rhs))
            scale[: len(w)] = 1.0 / np.maximum(np.hypot(*(w.xy - np.asarray(w.origin)).T), 1e-9)
            design, rhs = design * scale[:, None], rhs * scale
        designs.append(design)
        rhss.append(rhs)
    return np.vstack(designs), np.concatenate(rhss)


def solve_calibration(windows, normalize=False) -> CalibrationEstimate:
    """Least-squares ``(k_bar, beta_bar)`` from one window or a list of windows.

    With ``normalize`` each resultant row is divided by ``|r_j|``; otherwise
    the resultant rows, which scale with distance from the origin, dominate
    the fit far from it.
    """
    design, rhs = _stack(windows, normalize)
    u, sv, vt = np.linalg.svd(design, full_matrices=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        null = vt[sv <= RANK_TOL * sv[0]]
        names = sorted({PARAMS[i] for vec in null for i in np.flatnonzero(np.abs(vec) > 1e-3)})
        raise UnobservableCalibration("calibration design matrix is rank deficient", names)
    q, rmat = np.linalg.qr(design)
    x = np.linalg.solve(rmat, q.T @ rhs)
    resid = design @ x - rhs
    return CalibrationEstimate(x[:2].copy(), x[2:].copy(), float(np.sqrt(np.mean(resid**2))), len(rhs))


def solve_bias(windows, k_fixed, free_k=(False, False), normalize=False) -> CalibrationEstimate:
    """Least squares with the scale factors not flagged in ``free_k`` held at ``k_fixed``.

    The biases are always estimated.
    """
    design, rhs = _stack(windows, normalize)
    k_fixed = np.asarray(k_fixed, dtype=float).reshape(2)
    free = np.concatenate([np.asarray(free_k, dtype=bool).reshape(2), [True, True]])
    held = ~free
    reduced_rhs = rhs - design[:, held] @ k_fixed[held[:2]]
    sub = design[:, free]
    sol, *_ = np.linalg.lstsq(sub, reduced_rhs, rcond=None)
    resid = sub @ sol - reduced_rhs
    x = np.concatenate([k_fixed, [0.0, 0.0]])
    x[free] = sol
    status = "bias_only" if not free[:2].any() else "partial"
    return CalibrationEstimate(x[:2], x[2:], float(np.sqrt(np.mean(resid**2))), len(rhs), status)


@dataclass(frozen=True)
class AccelModel:
    h: np.ndarray  # (2,) acceleration implied by the two latest poses
    H_p: np.ndarray  # (2, 2) d h / d p_j
    H_v: np.ndarray  # (2, 2) d h / d v_j


def accel_measurement(state, r_prev, r_curr, m_prev, m_curr) -> AccelModel:
    """Acceleration solving ``[r_prev; r_curr] h = [m_prev; m_curr]`` and its partials.

    ``m_curr`` is treated as a function of the current planar position and
    velocity through ``S = |r|`` and ``S' = r.v / S``, with ``S''`` held at
    the value implied by ``m_curr`` at the state's velocity.
    """
    r_prev = np.asarray(r_prev, dtype=float)
    r_curr = np.asarray(r_curr, dtype=float)
    R = np.vstack([r_prev, r_curr])
    if np.linalg.cond(R) >= MAX_COND:
        raise SkipAccelUpdate("poses are collinear with the window origin")
    v = np.asarray(state.v, dtype=float)[:2]
    S = float(np.hypot(*r_curr))
    S_dot = float(r_curr @ v) / S
    S_ddot = (m_curr + v @ v - S_dot**2) / S
    h = np.linalg.solve(R, [m_prev, m_curr])
    dS_dp = r_curr / S
    dSdot_dp = v / S - S_dot * r_curr / S**2
    dSdot_dv = r_curr / S
    dm_dp = dS_dp * S_ddot + 2.0 * S_dot * dSdot_dp
    dm_dv = -2.0 * v + 2.0 * S_dot * dSdot_dv
    r_inv = np.linalg.inv(R)
    # d(R^-1 M) = R^-1 (dM - dR h); only the second rows of R and M move
    H_p = r_inv @ np.vstack([np.zeros(2), dm_dp - h])
    H_v = r_inv @ np.vstack([np.zeros(2), dm_dv])
    return AccelModel(h, H_p, H_v)
