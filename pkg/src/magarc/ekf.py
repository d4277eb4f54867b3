"""Error-state EKF fusing IMU propagation, magnetic batch fixes and
accelerometer calibration.

Three cadences drive the loop: every IMU sample propagates the state and
covariance, every ``mag_interval`` seconds the latest batch of field
magnitudes is matched against the map and the matched position updates the
filter, and every ``acc_interval`` seconds the matched poses of the recent
batches feed a least-squares accelerometer calibration whose corrected
acceleration is fused as a further measurement.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from . import accel_cal
from .errors import (
    FilterDivergence, RejectUpdate, SkipAccelUpdate, TimeRegression, UnobservableCalibration,
)
from .glomap import RouteMaps
from .kinematics import (
    ATT, BA, BG, KA, KG, N_ERR, POS, VEL, ImuSample, NavState, NoiseParams, dcm, noise_matrix,
    propagate, transition_matrix, yaw_from_quat,
)
from .mag_match import MagBatch, MatchCandidate, along_track_sigma, match_batch, track_tangent

EVENTS = ("predict", "mag_update", "mag_reject", "acc_update", "acc_skip")
REPORT_COLUMNS = ("t", "x", "y", "x_true", "y_true", "trace_Ppos", "event")
CAL_COLUMNS = ("t", "kx", "ky", "bx", "by", "residual_rms", "n_rows", "status")
CANDIDATE_COLUMNS = ("t", "s_end", "error", "x", "y", "accepted")
ACCEL_COLUMNS = ("t", "ax_raw", "ay_raw", "ax_corr", "ay_corr")
_XY = np.array([POS.start, POS.start + 1])
_TIME_EPS = 1e-9


def _diag(values, n):
    arr = np.broadcast_to(np.asarray(values, dtype=float), (n,))
    return np.diag(arr)


@dataclass(frozen=True)
class FilterConfig:
    noise: NoiseParams = field(default_factory=NoiseParams)
    R_mag: np.ndarray = field(default_factory=lambda: np.diag([0.25, 0.25]))
    R_acc: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01]))
    imu_interval: float = 0.1
    mag_interval: float = 3.0
    acc_interval: float = 6.0
    batch_len: int = 30
    stride: float = 0.5
    threshold: float | None = None  # default 0.15 sqrt(n) uT
    gate_min: float = 10.0
    gate_sigma: float = 3.0
    speed_sigma: float = 3.0  # speed hypotheses span this many sigma of |v|
    speed_step: float = 0.02  # relative spacing of speed hypotheses
    max_speed_scale: float = 0.25
    mag_sigma: float = 0.1  # magnetometer noise, uT
    along_track: bool = True  # widen R_mag along the road when the match is poorly localized
    along_track_max: float = 30.0  # cap on the along-track standard deviation, m
    chi2_gate: bool = True
    chi2_prob: float = 0.999
    joseph: bool = False
    gravity_comp: bool = True
    mag_updates: bool = True
    acc_updates: bool = True
    acc_jacobian: str = "state"  # "state" or "kinematic"
    cal_window: int = 60
    cal_min_excitation: float = 0.1  # m/s^2 spread needed to estimate a scale factor
    cal_origin: tuple[float, float] = (-250.0, -150.0)
    # initial covariance standard deviations
    sigma0_att: float = 0.005
    sigma0_pos: float = 1.0
    sigma0_vel: float = 0.1
    sigma0_bg: float = 2e-3
    sigma0_ba: float = 0.3
    sigma0_kg: float = 1e-3
    sigma0_ka: float = 0.05

    def __post_init__(self):
        for name in ("R_mag", "R_acc"):
            r = np.asarray(getattr(self, name), dtype=float)
            if r.shape != (2, 2) or np.any(np.diag(r) <= 0):
                raise ValueError(f"{name} must be 2x2 with positive diagonal")
            object.__setattr__(self, name, r)
        for name in ("imu_interval", "mag_interval", "acc_interval", "stride", "gate_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_len < 2:
            raise ValueError("batch_len must be at least 2")
        if self.acc_jacobian not in ("state", "kinematic"):
            raise ValueError("acc_jacobian must be 'state' or 'kinematic'")
        if not 0 < self.chi2_prob < 1:
            raise ValueError("chi2_prob must lie in (0, 1)")

    @property
    def Q(self) -> np.ndarray:
        return self.noise.Q

    @property
    def chi2_limit(self) -> float:
        return float(chi2.ppf(self.chi2_prob, 2))

    def initial_covariance(self) -> np.ndarray:
        sig = np.zeros(N_ERR)
        for sl, value in ((ATT, self.sigma0_att), (POS, self.sigma0_pos), (VEL, self.sigma0_vel),
                          (BG, self.sigma0_bg), (BA, self.sigma0_ba), (KG, self.sigma0_kg),
                          (KA, self.sigma0_ka)):
            sig[sl] = value
        return np.diag(sig**2)


@dataclass(frozen=True)
class FilterState:
    nav: NavState
    P: np.ndarray
    t: float

    @property
    def P_xy(self) -> np.ndarray:
        return self.P[np.ix_(_XY, _XY)]

    @property
    def trace_pos(self) -> float:
        """Trace of the planar position block."""
        return float(self.P[_XY, _XY].sum())


def _symmetrize(P):
    return 0.5 * (P + P.T)


def _check(fs: FilterState) -> FilterState:
    d = np.diag(fs.P)
    if not np.all(np.isfinite(fs.P)) or not np.all(np.isfinite(fs.nav.p)):
        raise FilterDivergence(f"non-finite filter state at t = {fs.t}")
    if np.any(d < 0):
        raise FilterDivergence(f"negative covariance diagonal at t = {fs.t}: index {int(np.argmin(d))}")
    return fs


def time_update(fs: FilterState, sample: ImuSample, cfg: FilterConfig) -> FilterState:
    dt = sample.timestamp - fs.t
    if not dt > 0:
        raise TimeRegression(f"sample at t = {sample.timestamp} does not follow t = {fs.t}")
    F = transition_matrix(fs.nav, sample, dt, cfg.gravity_comp)
    G = noise_matrix(fs.nav, dt, sample)
    P = F @ fs.P @ F.T + G @ cfg.Q @ G.T
    nav = propagate(fs.nav, sample, dt, cfg.gravity_comp)
    return _check(FilterState(nav, _symmetrize(P), sample.timestamp))


def _kalman(fs: FilterState, innovation, H, R, cfg: FilterConfig, gate: bool) -> FilterState:
    S = H @ fs.P @ H.T + R
    S_inv = np.linalg.inv(S)
    d2 = float(innovation @ S_inv @ innovation)
    if gate and d2 > cfg.chi2_limit:
        raise RejectUpdate(f"innovation Mahalanobis distance^2 {d2:.2f} exceeds gate", d2)
    K = fs.P @ H.T @ S_inv
    nav = fs.nav.inject(K @ innovation)
    IKH = np.eye(N_ERR) - K @ H
    if cfg.joseph:
        P = IKH @ fs.P @ IKH.T + K @ R @ K.T
    else:
        P = IKH @ fs.P
    return _check(FilterState(nav, _symmetrize(P), fs.t))


def mag_update(fs: FilterState, candidate: MatchCandidate, cfg: FilterConfig, R=None) -> FilterState:
    """Position fix at the candidate's map position; ``R`` defaults to ``cfg.R_mag``."""
    H = np.zeros((2, N_ERR))
    H[0, _XY[0]] = H[1, _XY[1]] = 1.0
    z = np.asarray(candidate.xy, dtype=float)
    R = cfg.R_mag if R is None else np.asarray(R, dtype=float)
    return _kalman(fs, z - fs.nav.p[:2], H, R, cfg, cfg.chi2_gate)


def match_noise(batch: MagBatch, maps: RouteMaps, candidate: MatchCandidate, cfg: FilterConfig):
    """``R_mag`` plus the along-track spread of the match, projected on the road tangent."""
    if not cfg.along_track:
        return cfg.R_mag
    sigma_s = min(cfg.along_track_max, along_track_sigma(batch, maps, candidate.s_end, cfg.mag_sigma))
    t = track_tangent(maps, candidate.s_end)
    return cfg.R_mag + sigma_s**2 * np.outer(t, t)


def accel_update(fs: FilterState, cal: accel_cal.CalibrationEstimate, sample: ImuSample,
                 model: accel_cal.AccelModel | None, cfg: FilterConfig) -> FilterState:
    """Fuse the calibrated acceleration ``k_bar * a - beta_bar`` (planar, body frame).

    With ``acc_jacobian == "state"`` the measurement is linearized with respect
    to the accelerometer bias and scale states. With ``"kinematic"`` it is mapped
    into the local frame and only the position and velocity blocks from
    ``model`` are used.
    """
    if model is None:
        raise SkipAccelUpdate("no acceleration model for this window")
    acc = np.asarray(sample.accel_meas, dtype=float)[:2]
    nav = fs.nav
    z = cal.k_bar * acc - cal.beta_bar
    h = nav.k_a[:2] * acc - nav.beta_a[:2]
    H = np.zeros((2, N_ERR))
    if cfg.acc_jacobian == "state":
        H[:, BA.start:BA.start + 2] = -np.eye(2)
        H[:, KA.start:KA.start + 2] = np.diag(acc)
        innovation = z - h
    else:
        rot = dcm(nav.q)[:2, :2].T
        H[:, POS.start:POS.start + 2] = model.H_p
        H[:, VEL.start:VEL.start + 2] = model.H_v
        innovation = rot @ (z - h)
    return _kalman(fs, innovation, H, cfg.R_acc, cfg, cfg.chi2_gate)


def initial_state(truth: NavState, cfg: FilterConfig, t0=0.0, rng=None) -> FilterState:
    """Filter start at nominal sensor errors around a (perturbed) truth pose.

    Biases start at zero and scale factors at nominal; when ``rng`` is given
    the pose is perturbed with the configured attitude, position and
    velocity standard deviations.
    """
    q, p, v = truth.q, truth.p.copy(), truth.v.copy()
    if rng is not None:
        from .kinematics import quat_from_rotvec, quat_product

        dphi = np.array([0.0, 0.0, rng.normal(0.0, cfg.sigma0_att)])
        q = quat_product(quat_from_rotvec(dphi), q)
        p[:2] += rng.normal(0.0, cfg.sigma0_pos, 2)
        v[:2] += rng.normal(0.0, cfg.sigma0_vel, 2)
    nav = NavState(q=q, p=p, v=v)
    return FilterState(nav, cfg.initial_covariance(), float(t0))


@dataclass
class RunReport:
    rows: list = field(default_factory=list)  # REPORT_COLUMNS
    cal_rows: list = field(default_factory=list)  # CAL_COLUMNS
    candidate_rows: list = field(default_factory=list)  # CANDIDATE_COLUMNS
    accel_rows: list = field(default_factory=list)  # ACCEL_COLUMNS
    step_t: list = field(default_factory=list)
    step_xy: list = field(default_factory=list)
    step_P_xy: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    final: FilterState | None = None

    def count(self, event) -> int:
        return sum(1 for r in self.rows if r[6] == event)

    def events(self):
        return [r[6] for r in self.rows]

    def arrays(self):
        """Per-IMU-step time, planar estimate and planar covariance after all updates."""
        return np.array(self.step_t), np.array(self.step_xy), np.array(self.step_P_xy)

    def deviation(self):
        """Planar estimate-vs-truth distance at every step with a truth value."""
        rows = [r for r in self.rows if r[6] == "predict"]
        d = np.array([math.hypot(r[1] - r[3], r[2] - r[4]) for r in rows])
        return d[np.isfinite(d)]


class _Truth:
    def __init__(self, t, xy):
        self.t = np.asarray(t, dtype=float)
        self.xy = np.asarray(xy, dtype=float)

    def __call__(self, t):
        if self.t.size == 0:
            return math.nan, math.nan
        return float(np.interp(t, self.t, self.xy[:, 0])), float(np.interp(t, self.t, self.xy[:, 1]))


@dataclass
class _MatchedBatch:
    t: np.ndarray
    xy: np.ndarray


def run_filter(imu, mag_t, mag_values, maps: RouteMaps | None, cfg: FilterConfig,
               initial: FilterState, truth=None) -> RunReport:
    """Run the three-cadence filter over time-ordered IMU and magnetometer streams.

    ``truth`` is an optional ``(t, xy)`` pair used only for the report's
    truth columns. Passing ``maps=None`` or an empty magnetometer stream gives
    pure dead reckoning.
    """
    mag_t = np.asarray(mag_t, dtype=float).reshape(-1)
    mag_values = np.asarray(mag_values, dtype=float).reshape(-1)
    if mag_t.shape != mag_values.shape:
        raise ValueError("magnetometer times and values differ in length")
    if np.any(np.diff(mag_t) <= 0):
        raise TimeRegression("magnetometer stream is not strictly increasing")
    truth_fn = _Truth(*truth) if truth is not None else _Truth([], np.empty((0, 2)))
    use_mag = cfg.mag_updates and maps is not None and mag_t.size >= cfg.batch_len
    use_acc = use_mag and cfg.acc_updates
    mag_dt = float(np.median(np.diff(mag_t))) if mag_t.size > 1 else cfg.imu_interval
    report = RunReport()
    fs = initial
    t0 = fs.t
    next_mag = t0 + cfg.mag_interval
    next_acc = t0 + cfg.acc_interval
    i_mag = 0
    history_len = int(math.ceil((cfg.acc_interval + cfg.mag_interval) / cfg.imu_interval)) + 4
    history = deque(maxlen=history_len)  # (t, yaw, raw accel xy)
    matched = deque()

    def emit(fs, event):
        xt, yt = truth_fn(fs.t)
        report.rows.append((fs.t, float(fs.nav.p[0]), float(fs.nav.p[1]), xt, yt, fs.trace_pos, event))

    for sample in imu:
        fs = time_update(fs, sample, cfg)
        history.append((fs.t, yaw_from_quat(fs.nav.q), np.asarray(sample.accel_meas[:2], dtype=float)))
        emit(fs, "predict")
        while i_mag < mag_t.size and mag_t[i_mag] <= fs.t + _TIME_EPS:
            i_mag += 1
        if use_mag and fs.t >= next_mag - _TIME_EPS:
            while next_mag <= fs.t + _TIME_EPS:
                next_mag += cfg.mag_interval
            fs = _magnetic_step(fs, cfg, maps, mag_t, mag_values, i_mag, mag_dt, report, matched, emit)
        if use_acc and fs.t >= next_acc - _TIME_EPS:
            while next_acc <= fs.t + _TIME_EPS:
                next_acc += cfg.acc_interval
            fs = _accel_step(fs, cfg, matched, history, sample, report, emit)
        corr = fs.nav.k_a[:2] * sample.accel_meas[:2] - fs.nav.beta_a[:2]
        report.accel_rows.append((fs.t, float(sample.accel_meas[0]), float(sample.accel_meas[1]),
                                  float(corr[0]), float(corr[1])))
        report.step_t.append(fs.t)
        report.step_xy.append(fs.nav.p[:2].copy())
        report.step_P_xy.append(fs.P_xy.copy())
    report.final = fs
    return report


def _speed_scales(fs, cfg, speed):
    """Relative batch-spacing hypotheses covering the velocity uncertainty."""
    if cfg.speed_step <= 0 or cfg.speed_sigma <= 0:
        return (1.0,)
    P_v = fs.P[VEL.start:VEL.start + 2, VEL.start:VEL.start + 2]
    rel = min(cfg.max_speed_scale, cfg.speed_sigma * math.sqrt(np.trace(P_v)) / speed)
    n = int(rel / cfg.speed_step)
    return tuple(1.0 + cfg.speed_step * np.arange(-n, n + 1))


def _magnetic_step(fs, cfg, maps, mag_t, mag_values, i_mag, mag_dt, report, matched, emit):
    n = cfg.batch_len
    if i_mag < n or abs(mag_t[i_mag - 1] - fs.t) > 0.5 * mag_dt:
        report.notes.append(f"t={fs.t:.3f}: not enough magnetometer samples for a batch")
        emit(fs, "mag_reject")
        return fs
    speed = float(np.hypot(*fs.nav.v[:2]))
    if speed * mag_dt <= 1e-6:
        report.notes.append(f"t={fs.t:.3f}: vehicle stationary, batch skipped")
        emit(fs, "mag_reject")
        return fs
    batch = MagBatch(mag_values[i_mag - n:i_mag], speed * mag_dt, fs.t)
    predicted = fs.nav.p[:2]
    gate = max(cfg.gate_min, cfg.gate_sigma * math.sqrt(fs.trace_pos))
    result = match_batch(batch, maps, predicted, gate, cfg.stride, cfg.threshold,
                         _speed_scales(fs, cfg, speed))
    accepted = None
    if result.best is not None:
        try:
            scaled = MagBatch(batch.values, batch.ds * result.ds_scale, batch.t_end)
            fs = mag_update(fs, result.best, cfg, match_noise(scaled, maps, result.best, cfg))
            accepted = result.best
        except RejectUpdate as exc:
            report.notes.append(f"t={fs.t:.3f}: {exc}")
    else:
        report.notes.append(f"t={fs.t:.3f}: no gated match ({len(result.candidates)} candidates)")
    for c in result.candidates:
        report.candidate_rows.append((fs.t, c.s_end, c.error, c.xy[0], c.xy[1], int(c is accepted)))
    if accepted is None:
        emit(fs, "mag_reject")
        return fs
    s = accepted.s_end - batch.ds * result.ds_scale * np.arange(n - 1, -1, -1, dtype=float)
    s = np.clip(s, maps.s_min, maps.s_max)
    matched.append(_MatchedBatch(mag_t[i_mag - n:i_mag].copy(), maps.position(s)))
    emit(fs, "mag_update")
    return fs


def _pose_windows(fs, cfg, matched, history):
    hist_t = np.array([h[0] for h in history])
    hist_yaw = np.unwrap(np.array([h[1] for h in history]))
    hist_acc = np.array([h[2] for h in history])
    windows, used = [], 0
    # newest batches first, up to cal_window poses
    for mb in reversed(matched):
        if fs.t - mb.t[-1] > cfg.acc_interval - _TIME_EPS or used >= cfg.cal_window:
            break
        keep = slice(max(0, len(mb.t) - (cfg.cal_window - used)), len(mb.t))
        t, xy = mb.t[keep], mb.xy[keep]
        if len(t) < accel_cal.MIN_POSES or t[0] < hist_t[0] - 1e-9:
            continue
        idx = np.clip(np.searchsorted(hist_t, t - 1e-9), 0, len(hist_t) - 1)
        nxt = np.clip(idx + 1, 0, len(hist_t) - 1)
        # readings either side of each pose time
        acc = 0.5 * (hist_acc[idx] + hist_acc[nxt])
        yaw = np.interp(t, hist_t, hist_yaw)
        windows.append(accel_cal.PoseWindow(t, xy, acc, cfg.cal_origin, yaw))
        used += len(t)
    windows.reverse()
    return windows


def _accel_step(fs, cfg, matched, history, sample, report, emit):
    windows = _pose_windows(fs, cfg, matched, history)
    if not windows:
        report.notes.append(f"t={fs.t:.3f}: no matched poses for calibration")
        emit(fs, "acc_skip")
        return fs
    acc_all = np.concatenate([w.accel_meas_xy for w in windows])
    # noise alone lets k = beta = 0 fit a constant-speed window, so a scale
    # factor is only estimated on an axis that is actually excited
    free = acc_all.std(axis=0) > cfg.cal_min_excitation
    try:
        if not free.all():
            raise UnobservableCalibration("scale factors not excited")
        cal = accel_cal.solve_calibration(windows, normalize=True)
    except UnobservableCalibration:
        cal = accel_cal.solve_bias(windows, fs.nav.k_a[:2], free if not free.all() else (False, False),
                                  normalize=True)
    status = cal.status
    last = windows[-1]
    kin = accel_cal.arc_kinematics(last)
    acc_mean = acc_all.mean(axis=0)
    mean_sample = ImuSample(fs.t, sample.omega_meas, np.array([acc_mean[0], acc_mean[1], sample.accel_meas[2]]))
    try:
        model = accel_cal.accel_measurement(fs.nav, kin.r[-2], kin.r[-1], kin.m[-2], kin.m[-1])
        fs = accel_update(fs, cal, mean_sample, model, cfg)
    except (SkipAccelUpdate, RejectUpdate) as exc:
        report.notes.append(f"t={fs.t:.3f}: {exc}")
        status = "skip"
    report.cal_rows.append((fs.t, *map(float, cal.k_bar), *map(float, cal.beta_bar), cal.residual_rms,
                            cal.n_rows, status))
    emit(fs, "acc_skip" if status == "skip" else "acc_update")
    return fs
