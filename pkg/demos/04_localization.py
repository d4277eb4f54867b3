"""
Localizing a drive with the map
===============================

The filter dead reckons on the IMU every 0.1 s, takes a map-matched
position every 3 s and fuses an accelerometer calibration every 6 s.
"""

# %%
import time

import numpy as np

from magarc import ekf, sim

run = sim.simulate(sim.Scenario(seed=0))
maps = run.maps()
cfg = ekf.FilterConfig()
init = ekf.initial_state(sim.truth_state(run.truth, 0), cfg, run.truth.t[0], sim.rng_for(0, 4))

start = time.perf_counter()
report = ekf.run_filter(run.imu, run.mag_t, run.mag_values, maps, cfg, init, (run.truth.t, run.truth.xy))
print(f"filtered {len(run.imu)} steps in {time.perf_counter() - start:.1f} s")
for event in ekf.EVENTS:
    print(f"{event:>11}: {report.count(event)}")

# %%
dev = report.deviation()
print(f"deviation: mean {dev.mean():.3f} m, median {np.median(dev):.3f} m, max {dev.max():.2f} m")

# %%
# Position uncertainty grows between fixes and drops at each one.
rows = [r for r in report.rows if 100 <= r[0] <= 112]
for r in rows:
    if r[6] != "predict" or abs(r[0] * 10 % 10) < 1e-6:
        print(f"t = {r[0]:6.1f}  trace {r[5]:.3f} m^2  {r[6]}")

# %%
# Raw versus corrected planar acceleration.
acc = np.array([r[1:] for r in report.accel_rows])
print("raw RMS      :", np.sqrt(np.mean(acc[:, :2] ** 2, axis=0)).round(3))
print("corrected RMS:", np.sqrt(np.mean(acc[:, 2:] ** 2, axis=0)).round(3))
print("bias estimate:", report.final.nav.beta_a[:2].round(3), " truth", run.scenario.imu.beta_a_true[:2])

# %%
# Without the map the same IMU drifts away.
dr = ekf.run_filter(run.imu, [], [], None, cfg, init, (run.truth.t, run.truth.xy))
print(f"dead reckoning: final deviation {dr.deviation()[-1]:.0f} m")
