"""
Matching a magnetometer batch against the map
=============================================

Thirty field readings, spaced by the predicted distance travelled between
samples, are slid along the magnitude map. Low-error sections become
candidates and the predicted pose decides between them.
"""

# %%
import numpy as np

from magarc import glomap, mag_match as mm, sim

run = sim.simulate(sim.Scenario(seed=0))
maps = run.maps()

k = 1500
batch = mm.MagBatch(run.mag_values[k - 29:k + 1], run.truth.speed[k] * 0.1, run.truth.t[k])
print(f"true end of batch s = {run.truth.s[k]:.2f} m")

# %%
# Error profile over the whole route and the refined local minima.
grid, err = mm.scan_grid(batch, maps)
print(f"{grid.size} grid points, min error {err.min():.3f} uT at s = {grid[np.argmin(err)]:.1f} m")
for c in mm.scan_candidates(batch, maps):
    print(f"candidate s = {c.s_end:8.2f} m  error {c.error:.3f} uT  xy = ({c.xy[0]:.1f}, {c.xy[1]:.1f})")

# %%
# A field with the same bump twice gives two equally good sections.
s = np.arange(0.0, 600.25, 0.25)
field = 50 + sum(3 * np.exp(-0.5 * ((s - c) / 12) ** 2) for c in (150, 450))
twins = glomap.RouteMaps.from_track(s, field, np.column_stack([s, 0 * s]))
twin_batch = mm.MagBatch(twins.magnitude(165.0 - np.arange(29, -1, -1.0)), 1.0)
both = mm.scan_candidates(twin_batch, twins)
print("candidates:", [round(c.s_end, 2) for c in both])

# %%
# Gating against the predicted pose keeps the right one.
for predicted in ((160.0, 2.0), (470.0, -1.0)):
    kept = mm.gate_candidates(both, predicted, 10.0)
    print(f"predicted {predicted}: kept {[round(c.s_end, 2) for c in kept]}")

# %%
# A flat stretch of field localizes the match poorly along the road.
for s_end in (165.0, 300.0):
    b = mm.MagBatch(twins.magnitude(s_end - np.arange(29, -1, -1.0)), 1.0)
    print(f"s = {s_end}: along-track sigma {mm.along_track_sigma(b, twins, s_end):.3g} m")
