"""Deterministic synthetic surveys and drive logs.

All randomness comes from PCG64 generators seeded through
``numpy.random.SeedSequence([seed, stream])`` so every stream is a pure
function of the scenario seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geo_frame, glomap
from .errors import GeometryError, InvalidImuTruth
from .geo_frame import LocalTrack
from .kinematics import GRAVITY, ImuSample, NavState, NoiseParams, dcm, quat_from_yaw

# stream ids for SeedSequence
_FIELD, _IMU, _MAG, _INIT = 1, 2, 3, 4

DEFAULT_ANCHOR = (30.6187, -96.3365)
FIELD_DIRECTION = np.array([0.0, 0.5, -np.sqrt(0.75)])  # unit vector, 60 deg inclination


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


@dataclass(frozen=True)
class RouteSpec:
    waypoints: np.ndarray
    speed: float = 30.0 / 3.6
    sample_dt: float = 0.1
    corner_radius: float = 20.0
    # optional sinusoidal speed modulation, m/s and s
    speed_amplitude: float = 0.0
    speed_period: float = 60.0

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "waypoints", wp)
        if len(wp) < 2:
            raise ValueError("a route needs at least two waypoints")
        if not (self.speed > 0 and self.sample_dt > 0):
            raise ValueError("speed and sample_dt must be positive")
        if self.corner_radius < 0 or self.speed_amplitude < 0 or self.speed_period <= 0:
            raise ValueError("invalid corner radius or speed modulation")
        if self.speed_amplitude >= self.speed:
            raise ValueError("speed modulation must keep the speed positive")


def default_waypoints(length=3000.0, corner_radius=20.0) -> np.ndarray:
    """Suburban-style open route whose filleted length equals ``length``."""
    headings = np.radians([0.0, 90.0, 0.0, -90.0, 0.0, 90.0, 180.0, 90.0, 180.0])
    legs = [420.0, 260.0, 380.0, 330.0, 300.0, 410.0, 250.0, 200.0]
    turns = np.abs(np.diff(headings))
    # a fillet of turn angle t shortens the polyline by r (2 tan(t/2) - t)
    shortening = float(np.sum(corner_radius * (2.0 * np.tan(turns / 2.0) - turns)))
    legs.append(length + shortening - sum(legs))
    pts = [np.zeros(2)]
    for h, d in zip(headings, legs):
        pts.append(pts[-1] + d * np.array([np.cos(h), np.sin(h)]))
    return np.array(pts)


@dataclass(frozen=True)
class _Segment:
    s0: float
    length: float
    start: np.ndarray
    heading: float
    curvature: float  # signed, 1/m


def _build_segments(waypoints, radius) -> list[_Segment]:
    wp = waypoints
    d = np.diff(wp, axis=0)
    seg_len = np.hypot(d[:, 0], d[:, 1])
    if np.any(seg_len <= 0):
        raise GeometryError("consecutive waypoints coincide")
    u = d / seg_len[:, None]
    turn = np.array([
        math.atan2(u[i, 0] * u[i + 1, 1] - u[i, 1] * u[i + 1, 0], u[i] @ u[i + 1])
        for i in range(len(u) - 1)
    ])
    if np.any(np.abs(turn) > np.radians(179.0)):
        raise GeometryError("route reverses direction at a waypoint")
    tangent = radius * np.tan(np.abs(turn) / 2)
    before = np.concatenate([[0.0], tangent])
    after = np.concatenate([tangent, [0.0]])
    straight = seg_len - before - after
    if np.any(straight < -1e-9):
        raise GeometryError(f"corner radius {radius} m too large for the waypoint spacing")
    segments = []
    s = 0.0
    for i in range(len(u)):
        start = wp[i] + before[i] * u[i]
        heading = math.atan2(u[i, 1], u[i, 0])
        if straight[i] > 0:
            segments.append(_Segment(s, float(straight[i]), start, heading, 0.0))
            s += float(straight[i])
        if i < len(turn) and turn[i] != 0.0 and radius > 0:
            arc_start = wp[i + 1] - tangent[i] * u[i]
            length = radius * abs(turn[i])
            segments.append(_Segment(s, length, arc_start, heading, math.copysign(1.0 / radius, turn[i])))
            s += length
    return segments


def _eval_path(segments, s):
    """Position, heading and curvature at arc lengths ``s``."""
    starts = np.array([g.s0 for g in segments])
    idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(segments) - 1)
    xy = np.empty((len(s), 2))
    heading = np.empty(len(s))
    kappa = np.empty(len(s))
    for i, g in enumerate(segments):
        sel = idx == i
        if not np.any(sel):
            continue
        ds = s[sel] - g.s0
        if g.curvature == 0.0:
            heading[sel] = g.heading
            xy[sel] = g.start + ds[:, None] * np.array([math.cos(g.heading), math.sin(g.heading)])
        else:
            r = 1.0 / g.curvature  # signed
            h = g.heading + ds * g.curvature
            heading[sel] = h
            center = g.start + r * np.array([-math.sin(g.heading), math.cos(g.heading)])
            xy[sel] = center + r * np.column_stack([np.sin(h), -np.cos(h)])
        kappa[sel] = g.curvature
    return xy, heading, kappa


@dataclass(frozen=True)
class Trajectory:
    """Ground truth sampled at ``t``: local position, velocity, acceleration, heading."""

    t: np.ndarray
    xy: np.ndarray
    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    yaw: np.ndarray  # unwrapped, rad
    yaw_rate: np.ndarray
    curvature: np.ndarray

    @property
    def speed(self):
        return np.hypot(self.v[:, 0], self.v[:, 1])

    def track(self, mag=None) -> LocalTrack:
        mag = np.zeros(len(self.t)) if mag is None else np.asarray(mag, dtype=float)
        return LocalTrack(self.t, self.xy, geo_frame.cumulative_arclength(self.xy), mag)


def gen_trajectory(spec: RouteSpec) -> Trajectory:
    segments = _build_segments(spec.waypoints, spec.corner_radius)
    total = segments[-1].s0 + segments[-1].length
    amp, period = spec.speed_amplitude, spec.speed_period
    w = 2.0 * np.pi / period

    def s_of_t(t):
        return spec.speed * t + amp / w * (1.0 - np.cos(w * t))

    # first sample time past the end of the route
    t_end = total / spec.speed
    for _ in range(60):
        t_end -= (s_of_t(t_end) - total) / (spec.speed + amp * np.sin(w * t_end))
    n = int(np.floor(t_end / spec.sample_dt + 1e-9)) + 1
    t = np.arange(n) * spec.sample_dt
    s = np.minimum(s_of_t(t), total)
    speed = spec.speed + amp * np.sin(w * t)
    a_tan = amp * w * np.cos(w * t)
    xy, heading, kappa = _eval_path(segments, s)
    tang = np.column_stack([np.cos(heading), np.sin(heading)])
    norm = np.column_stack([-np.sin(heading), np.cos(heading)])
    v = speed[:, None] * tang
    a = a_tan[:, None] * tang + (speed**2 * kappa)[:, None] * norm
    yaw = np.unwrap(heading)
    return Trajectory(t, xy, s, v, a, yaw, speed * kappa, kappa)


@dataclass(frozen=True)
class Anomaly:
    center: tuple[float, float]
    amplitude: float  # microtesla, signed
    length_scale: float  # m


@dataclass(frozen=True)
class FieldSpec:
    base: float = 48.0
    n_anomalies: int = 400
    amplitude_range: tuple[float, float] = (0.5, 3.0)
    length_scale_range: tuple[float, float] = (10.0, 30.0)
    lateral_offset: float = 15.0
    seed: int = 0
    anomalies: tuple[Anomaly, ...] | None = None  # explicit list instead of random ones

    def __post_init__(self):
        if self.amplitude_range[0] < 0 or self.amplitude_range[1] < self.amplitude_range[0]:
            raise ValueError("amplitude range must be non-negative and ordered")
        if self.length_scale_range[0] <= 0 or self.length_scale_range[1] < self.length_scale_range[0]:
            raise ValueError("length scales must be positive and ordered")


class MagneticField:
    """Ambient field magnitude: a base value plus Gaussian anomalies in the plane."""

    def __init__(self, base, anomalies):
        self.base = float(base)
        self.anomalies = tuple(anomalies)
        self._c = np.array([a.center for a in self.anomalies]).reshape(-1, 2)
        self._amp = np.array([a.amplitude for a in self.anomalies])
        self._inv2l2 = np.array([0.5 / a.length_scale**2 for a in self.anomalies])

    def __call__(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = np.full(len(xy), self.base)
        for c, amp, k in zip(self._c, self._amp, self._inv2l2):
            d2 = (xy[:, 0] - c[0]) ** 2 + (xy[:, 1] - c[1]) ** 2
            out += amp * np.exp(-k * d2)
        return out

    @classmethod
    def from_spec(cls, track_xy, spec: FieldSpec) -> "MagneticField":
        if spec.anomalies is not None:
            return cls(spec.base, spec.anomalies)
        rng = rng_for(spec.seed, _FIELD)
        track_xy = np.asarray(track_xy, dtype=float)
        s = geo_frame.cumulative_arclength(track_xy)
        anomalies = []
        for _ in range(spec.n_anomalies):
            s_c = rng.uniform(0.0, s[-1])
            base_pt = np.array([np.interp(s_c, s, track_xy[:, 0]), np.interp(s_c, s, track_xy[:, 1])])
            offset = rng.normal(0.0, spec.lateral_offset, size=2)
            amp = rng.uniform(*spec.amplitude_range) * rng.choice([-1.0, 1.0])
            scale = rng.uniform(*spec.length_scale_range)
            anomalies.append(Anomaly(tuple(base_pt + offset), float(amp), float(scale)))
        return cls(spec.base, anomalies)


def gen_field(track, spec: FieldSpec) -> np.ndarray:
    """Field magnitude in microtesla at every sample of ``track``."""
    xy = track.xy if hasattr(track, "xy") else track
    return MagneticField.from_spec(xy, spec)(xy)


@dataclass(frozen=True)
class ImuTruth:
    beta_g_true: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 2e-3]))
    beta_a_true: np.ndarray = field(default_factory=lambda: np.array([0.2, -0.1, 0.0]))
    k_g_true: np.ndarray = field(default_factory=lambda: np.zeros(3))
    k_a_true: np.ndarray = field(default_factory=lambda: np.array([1.05, 0.95, 1.0]))
    noise: NoiseParams = field(default_factory=NoiseParams)
    seed: int = 0

    def __post_init__(self):
        for name in ("beta_g_true", "beta_a_true", "k_g_true", "k_a_true"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        gyro_scale = 1.0 - self.k_g_true
        if np.any(gyro_scale <= 0.5) or np.any(gyro_scale >= 1.5) or np.any(self.k_a_true <= 0.5) \
                or np.any(self.k_a_true >= 1.5):
            raise InvalidImuTruth("scale factors must lie in (0.5, 1.5)")


def synth_imu(traj: Trajectory, imu: ImuTruth, gravity_free=False, noise_free=False) -> list[ImuSample]:
    """Corrupted IMU samples reproducing ``traj`` under :func:`~magarc.kinematics.propagate`.

    Sample ``k`` ends at ``traj.t[k]`` and carries the mean body rate and
    mean acceleration over ``[t[k-1], t[k]]``, rotated with the attitude at
    the start of the interval.
    """
    gyro_scale = 1.0 - imu.k_g_true
    if np.any(gyro_scale == 0) or np.any(imu.k_a_true == 0):
        raise InvalidImuTruth("singular scale factor")
    rng = rng_for(imu.seed, _IMU)
    dt = np.diff(traj.t)
    n = len(dt)
    rate = np.diff(traj.yaw) / dt
    acc_local = np.zeros((n, 3))
    acc_local[:, :2] = np.diff(traj.v, axis=0) / dt[:, None]
    if not gravity_free:
        acc_local[:, 2] += GRAVITY
    noise = imu.noise
    if noise_free:
        eta = np.zeros((n, 12))
    else:
        eta = np.column_stack([
            rng.normal(0.0, 1.0, (n, 3)) * noise.sigma_gv,
            rng.normal(0.0, 1.0, (n, 3)) * noise.sigma_gu,
            rng.normal(0.0, 1.0, (n, 3)) * noise.sigma_av,
            rng.normal(0.0, 1.0, (n, 3)) * noise.sigma_au,
        ])
    beta_g = imu.beta_g_true.copy()
    beta_a = imu.beta_a_true.copy()
    samples = []
    for k in range(n):
        c = dcm(quat_from_yaw(traj.yaw[k]))
        omega_true = np.array([0.0, 0.0, rate[k]])
        a_body = c @ acc_local[k]
        omega_meas = (omega_true + eta[k, 0:3]) / gyro_scale + beta_g
        accel_meas = (a_body + beta_a + eta[k, 6:9]) / imu.k_a_true
        samples.append(ImuSample(float(traj.t[k + 1]), omega_meas, accel_meas))
        beta_g = beta_g + eta[k, 3:6] * dt[k]
        beta_a = beta_a + eta[k, 9:12] * dt[k]
    return samples


def add_mag_noise(values, sigma=0.1, seed=0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return values.copy()
    return values + rng_for(seed, _MAG).normal(0.0, sigma, values.shape)


def truth_state(traj: Trajectory, k: int, imu: ImuTruth | None = None) -> NavState:
    """Full navigation state at sample ``k``; biases and scales from ``imu`` when given."""
    extra = {}
    if imu is not None:
        extra = dict(beta_g=imu.beta_g_true, beta_a=imu.beta_a_true, k_g=imu.k_g_true, k_a=imu.k_a_true)
    return NavState(
        q=quat_from_yaw(traj.yaw[k]),
        p=np.array([traj.xy[k, 0], traj.xy[k, 1], 0.0]),
        v=np.array([traj.v[k, 0], traj.v[k, 1], 0.0]),
        **extra,
    )


@dataclass(frozen=True)
class Scenario:
    route: RouteSpec = field(default_factory=lambda: RouteSpec(default_waypoints()))
    field_spec: FieldSpec = field(default_factory=FieldSpec)
    imu: ImuTruth = field(default_factory=ImuTruth)
    mag_sigma: float = 0.1
    mag_mode: str = "independent"  # or "map": noise added to fitted map values
    map_h: float = 10.0
    gravity_free: bool = False
    anchor: tuple[float, float] = DEFAULT_ANCHOR
    seed: int = 0

    def __post_init__(self):
        if self.mag_mode not in ("independent", "map"):
            raise ValueError("mag_mode must be 'independent' or 'map'")


@dataclass
class SimulatedRun:
    scenario: Scenario
    survey: LocalTrack
    truth: Trajectory
    imu: list[ImuSample]
    mag_t: np.ndarray
    mag_values: np.ndarray
    mag_field: MagneticField

    def maps(self, h=None):
        """Magnitude, x and y maps built from the survey."""
        return build_survey_maps(self.survey, self.scenario.map_h if h is None else h)


def build_survey_maps(track: LocalTrack, h=10.0) -> glomap.RouteMaps:
    return glomap.RouteMaps.from_track(track.s, track.mag_magnitude, track.xy, h)


def simulate(scenario: Scenario = Scenario()) -> SimulatedRun:
    """Survey pass plus an independent drive over the same route."""
    traj = gen_trajectory(scenario.route)
    mag_field = MagneticField.from_spec(traj.xy, scenario.field_spec)
    survey = traj.track(mag_field(traj.xy))
    imu_truth = scenario.imu
    if imu_truth.seed != scenario.seed:
        imu_truth = ImuTruth(imu_truth.beta_g_true, imu_truth.beta_a_true, imu_truth.k_g_true,
                             imu_truth.k_a_true, imu_truth.noise, scenario.seed)
    imu = synth_imu(traj, imu_truth, gravity_free=scenario.gravity_free)
    if scenario.mag_mode == "independent":
        clean = mag_field(traj.xy)
    else:
        mag_map = glomap.build_map(survey.s, survey.mag_magnitude, scenario.map_h, "magnitude", "uT")
        clean = mag_map(traj.s)
    mag = add_mag_noise(clean, scenario.mag_sigma, scenario.seed)
    return SimulatedRun(scenario, survey, traj, imu, traj.t.copy(), mag, mag_field)


def synthesize_survey_geo(track: LocalTrack, anchor=DEFAULT_ANCHOR):
    """Lat/lon and a 3-axis field vector reproducing ``track`` through geo_frame."""
    latlon = geo_frame.from_local_frame(track.xy, anchor)
    mag_xyz = track.mag_magnitude[:, None] * FIELD_DIRECTION[None, :]
    return latlon, mag_xyz
