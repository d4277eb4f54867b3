"""Strapdown propagation and error-state linearization.

Quaternions are scalar-last ``[x, y, z, w]``. ``dcm(q)`` is the attitude
matrix taking local-frame vectors into the body frame, so body-frame
accelerations reach the local frame through its transpose. The local frame
is east/north/up.

The 21-element error state is ordered

    [dalpha(3), p(3), v(3), beta_g(3), beta_a(3), k_g(3), k_a(3)]

with the attitude error defined multiplicatively: ``q = dq(dalpha) * q_hat``
and ``dcm(dq) ~ I - [dalpha x]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import QuaternionNormError

GRAVITY = 9.80665  # m/s^2
N_ERR = 21
N_NOISE = 12

# error-state slices
ATT = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
KG = slice(15, 18)
KA = slice(18, 21)

_I3 = np.eye(3)
_SMALL_ANGLE = 1e-8


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_product(a, b) -> np.ndarray:
    """Composition with ``dcm(quat_product(a, b)) == dcm(a) @ dcm(b)``."""
    av, aw = np.asarray(a[:3]), a[3]
    bv, bw = np.asarray(b[:3]), b[3]
    vec = aw * bv + bw * av - np.cross(av, bv)
    return np.array([*vec, aw * bw - av @ bv])


def quat_from_yaw(yaw: float) -> np.ndarray:
    """Attitude for a body whose x axis points ``yaw`` rad counter-clockwise from east."""
    return np.array([0.0, 0.0, np.sin(0.5 * yaw), np.cos(0.5 * yaw)])


def quat_from_rotvec(phi) -> np.ndarray:
    """Quaternion with ``dcm == expm(-[phi x])``."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < _SMALL_ANGLE:
        q = np.array([*(0.5 * phi), 1.0])
        return q / np.linalg.norm(q)
    return np.array([*(np.sin(0.5 * angle) * phi / angle), np.cos(0.5 * angle)])


def yaw_from_quat(q) -> float:
    c = dcm(q)
    return float(np.arctan2(c[0, 1], c[0, 0]))


def normalize_quat(q, tol=1e-3) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > tol:
        raise QuaternionNormError(f"quaternion norm {norm:.6g} deviates from 1 by more than {tol}")
    return q / norm


def dcm(q) -> np.ndarray:
    """Attitude matrix ``C(q)``, local frame to body frame."""
    q = np.asarray(q, dtype=float)
    if abs(q @ q - 1.0) > 2e-6:
        q = normalize_quat(q)
    e, w = q[:3], q[3]
    return (w * w - e @ e) * _I3 + 2.0 * np.outer(e, e) - 2.0 * w * skew(e)


def rotation_exp(theta) -> np.ndarray:
    """``expm(-[theta x])`` via Rodrigues."""
    theta = np.asarray(theta, dtype=float)
    angle = np.linalg.norm(theta)
    k = skew(theta)
    if angle < _SMALL_ANGLE:
        return _I3 - k + 0.5 * k @ k
    return _I3 - np.sin(angle) / angle * k + (1.0 - np.cos(angle)) / angle**2 * k @ k


def right_jacobian(theta) -> np.ndarray:
    """First-order map from a rotation-vector increment to the attitude error."""
    theta = np.asarray(theta, dtype=float)
    angle = np.linalg.norm(theta)
    k = skew(theta)
    if angle < 1e-5:
        return _I3 - 0.5 * k + k @ k / 6.0
    return _I3 - (1.0 - np.cos(angle)) / angle**2 * k + (angle - np.sin(angle)) / angle**3 * k @ k


@dataclass(frozen=True)
class NavState:
    q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    k_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    k_a: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        for name in ("q", "p", "v", "beta_g", "beta_a", "k_g", "k_a"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != ((4,) if name == "q" else (3,)):
                raise ValueError(f"NavState.{name} has shape {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def replace(self, **changes) -> "NavState":
        return replace(self, **changes)

    def inject(self, dx, exact=False) -> "NavState":
        """Apply a 21-element error-state correction.

        The attitude uses ``q + 0.5 * Omega(dalpha) q`` followed by
        renormalization, or the exact rotation when ``exact`` is set.
        """
        dx = np.asarray(dx, dtype=float)
        if exact:
            q = quat_product(quat_from_rotvec(dx[ATT]), self.q)
        else:
            q = self.q + 0.5 * omega_matrix(dx[ATT]) @ self.q
        return NavState(
            q=q / np.linalg.norm(q),
            p=self.p + dx[POS],
            v=self.v + dx[VEL],
            beta_g=self.beta_g + dx[BG],
            beta_a=self.beta_a + dx[BA],
            k_g=self.k_g + dx[KG],
            k_a=self.k_a + dx[KA],
        )


@dataclass(frozen=True)
class ImuSample:
    """IMU reading covering the interval that ends at ``timestamp``."""

    timestamp: float
    omega_meas: np.ndarray
    accel_meas: np.ndarray

    def __post_init__(self):
        for name in ("omega_meas", "accel_meas"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (3,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"ImuSample.{name} must be a finite 3-vector")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class NoiseParams:
    """Per-axis standard deviations of the IMU error vector.

    ``sigma_gv``/``sigma_av`` are white noise on each gyro/accelerometer
    sample; ``sigma_gu``/``sigma_au`` drive the bias random walks, whose
    per-step increment is ``sigma * dt``.
    """

    sigma_gv: float | np.ndarray = 1e-4
    sigma_gu: float | np.ndarray = 1e-5
    sigma_av: float | np.ndarray = 0.02
    sigma_au: float | np.ndarray = 1e-4

    def __post_init__(self):
        for name in ("sigma_gv", "sigma_gu", "sigma_av", "sigma_au"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if np.any(arr < 0):
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, arr)

    @property
    def Q(self) -> np.ndarray:
        return np.diag(np.concatenate([self.sigma_gv, self.sigma_gu, self.sigma_av, self.sigma_au]) ** 2)


def omega_matrix(w) -> np.ndarray:
    """Quaternion rate matrix, ``omega_matrix(w) @ q == quat_product([*w, 0], q)``."""
    w = np.asarray(w, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = -skew(w)
    out[:3, 3] = w
    out[3, :3] = -w
    return out


def correct_imu(sample: ImuSample, state: NavState):
    """Bias- and scale-corrected ``(omega_hat, accel_hat)`` in the body frame."""
    omega = (1.0 - state.k_g) * (sample.omega_meas - state.beta_g)
    accel = state.k_a * sample.accel_meas - state.beta_a
    return omega, accel


def phi_matrix(omega_hat, dt) -> np.ndarray:
    """Discrete quaternion transition for a constant body rate over ``dt``."""
    omega_hat = np.asarray(omega_hat, dtype=float)
    rate = np.linalg.norm(omega_hat)
    if rate * dt < _SMALL_ANGLE:
        c = 1.0
        psi = 0.5 * dt * omega_hat
    else:
        c = np.cos(0.5 * rate * dt)
        psi = np.sin(0.5 * rate * dt) * omega_hat / rate
    out = np.empty((4, 4))
    out[:3, :3] = c * _I3 - skew(psi)
    out[:3, 3] = psi
    out[3, :3] = -psi
    out[3, 3] = c
    return out


def _local_accel(c_t, accel_hat, gravity_comp):
    a = c_t @ accel_hat
    if gravity_comp:
        a = a - np.array([0.0, 0.0, GRAVITY])
    return a


def propagate(state: NavState, sample: ImuSample, dt, gravity_comp=True, noise=None) -> NavState:
    """One strapdown step of length ``dt`` using ``sample``.

    ``noise`` optionally injects the 12-element IMU error vector
    ``[eta_gv, eta_gu, eta_av, eta_au]``; it exists for linearization checks
    and Monte-Carlo studies.
    """
    omega, accel = correct_imu(sample, state)
    beta_g, beta_a = state.beta_g, state.beta_a
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        omega = omega - noise[0:3]
        accel = accel - noise[6:9]
        beta_g = beta_g + noise[3:6] * dt
        beta_a = beta_a + noise[9:12] * dt
    c_t = dcm(state.q).T
    a_local = _local_accel(c_t, accel, gravity_comp)
    q = phi_matrix(omega, dt) @ state.q
    return NavState(
        q=q / np.linalg.norm(q),
        p=state.p + state.v * dt + 0.5 * a_local * dt * dt,
        v=state.v + a_local * dt,
        beta_g=beta_g,
        beta_a=beta_a,
        k_g=state.k_g,
        k_a=state.k_a,
    )


def transition_matrix(state: NavState, sample: ImuSample, dt, gravity_comp=True) -> np.ndarray:
    """Exact Jacobian of :func:`propagate` with respect to the error state."""
    omega, accel = correct_imu(sample, state)
    theta = omega * dt
    jr = right_jacobian(theta)
    c_t = dcm(state.q).T
    ca_x = c_t @ skew(accel)
    F = np.eye(N_ERR)
    F[ATT, ATT] = rotation_exp(theta)
    F[ATT, BG] = -jr * (1.0 - state.k_g) * dt
    F[ATT, KG] = -jr * (sample.omega_meas - state.beta_g) * dt
    F[POS, ATT] = -0.5 * ca_x * dt * dt
    F[POS, VEL] = _I3 * dt
    F[POS, BA] = -0.5 * c_t * dt * dt
    F[POS, KA] = 0.5 * c_t * sample.accel_meas * dt * dt
    F[VEL, ATT] = -ca_x * dt
    F[VEL, BA] = -c_t * dt
    F[VEL, KA] = c_t * sample.accel_meas * dt
    return F


def noise_matrix(state: NavState, dt, sample: ImuSample | None = None) -> np.ndarray:
    """Jacobian of :func:`propagate` with respect to the IMU error vector.

    Without ``sample`` the attitude block is the first-order ``-I dt``.
    """
    c_t = dcm(state.q).T
    jr = _I3 if sample is None else right_jacobian(correct_imu(sample, state)[0] * dt)
    G = np.zeros((N_ERR, N_NOISE))
    G[ATT, 0:3] = -jr * dt
    G[POS, 6:9] = -0.5 * c_t * dt * dt
    G[VEL, 6:9] = -c_t * dt
    G[BG, 3:6] = _I3 * dt
    G[BA, 9:12] = _I3 * dt
    return G


def attitude_error(q, q_ref) -> np.ndarray:
    """Rotation vector ``dalpha`` with ``q == dq(dalpha) * q_ref``."""
    d = dcm(q) @ dcm(q_ref).T
    # expm(-[a x]) = d  ->  skew part of d is -sin|a| a/|a| ...
    cos_angle = np.clip(0.5 * (np.trace(d) - 1.0), -1.0, 1.0)
    angle = np.arccos(cos_angle)
    axis_sin = 0.5 * np.array([d[1, 2] - d[2, 1], d[2, 0] - d[0, 2], d[0, 1] - d[1, 0]])
    if angle < 1e-7:
        return axis_sin
    return axis_sin * angle / np.sin(angle)
