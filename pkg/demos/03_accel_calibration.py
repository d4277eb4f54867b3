"""
Accelerometer calibration from matched poses
============================================

Positions recovered by map matching, together with the raw accelerometer
readings, pin down the planar scale factors and biases by least squares.
"""

# %%
import numpy as np

from magarc import accel_cal as ac
from magarc.errors import UnobservableCalibration

k_true = np.array([1.05, 0.95])
beta_true = np.array([0.2, -0.1])

t = np.arange(60) * 0.1
x = 10 * t + 0.5 * t**2 - 0.05 * t**3
y = 0.8 * t**2 + 0.02 * t**3
a_true = np.column_stack([1.0 - 0.3 * t, 1.6 + 0.12 * t])
window = ac.PoseWindow(t, np.column_stack([x, y]), (a_true + beta_true) / k_true, origin=(-30.0, -20.0))

# %%
# Noise-free data on a curved path recovers the parameters.
est = ac.solve_calibration(window)
print("k    :", est.k_bar.round(9), " truth", k_true)
print("beta :", est.beta_bar.round(9), " truth", beta_true)
print("system rows:", est.n_rows, " residual RMS:", f"{est.residual_rms:.1e}")

# %%
# Noisy readings: the spread of estimates over repeated windows.
rng = np.random.default_rng(1)
omega, radius = 0.5, 20.0
xy = radius * np.column_stack([np.cos(omega * t), np.sin(omega * t)])
acc = (-omega**2 * xy + beta_true) / k_true
estimates = []
for _ in range(200):
    noisy = ac.PoseWindow(t, xy, acc + rng.normal(0, 0.05, acc.shape), (-30.0, -20.0))
    e = ac.solve_calibration(noisy, normalize=True)
    estimates.append(np.r_[e.k_bar, e.beta_bar])
estimates = np.array(estimates)
print("mean:", estimates.mean(0).round(3), " sd:", estimates.std(0).round(3))

# %%
# Driving straight at constant speed leaves the scale factors unobservable.
line = ac.PoseWindow(t, np.column_stack([8 * t, 4 * t]), np.tile(beta_true / k_true, (60, 1)))
try:
    ac.solve_calibration(line)
except UnobservableCalibration as exc:
    print("unobservable:", exc.directions)
print("bias with k held:", ac.solve_bias([line], k_true).beta_bar)
