"""
Fitting route maps to a survey pass
===================================

A survey drive records the field magnitude along the road. Here we simulate
one, fit the blended Legendre maps and look at how well, and how compactly,
they describe it.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from magarc import geo_frame, glomap, sim

run = sim.simulate(sim.Scenario(seed=0))
survey = run.survey
print(f"{len(survey)} survey samples over {survey.s[-1]:.0f} m")

# %%
# Each map is a chain of cubic fits on 20 m windows that overlap by 10 m.
maps = glomap.RouteMaps.from_track(survey.s, survey.mag_magnitude, survey.xy, h=10.0)
for m, values in zip(maps, (survey.mag_magnitude, survey.xy[:, 0], survey.xy[:, 1])):
    rms = np.sqrt(np.mean((m(survey.s) - values) ** 2))
    print(f"{m.value_label:>9}: {m.n_fits} fits, RMS {rms:.4f} {m.value_units}")

# %%
# Blending weights of neighbouring fits always sum to one.
u = np.linspace(0, 1, 5)
print(np.round(glomap.weight(u) + glomap.weight(u - 1), 15))

# %%
# Storage: the map files against the raw survey CSV.
with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    latlon, mag = sim.synthesize_survey_geo(survey)
    geo_frame.write_survey(tmp / "survey.csv", survey.timestamp, latlon, mag)
    paths = maps.save(tmp)
    raw = (tmp / "survey.csv").stat().st_size
    for p in paths:
        print(f"{p.name}: {p.stat().st_size} bytes, {raw / p.stat().st_size:.1f}x smaller than the survey")
    reloaded = glomap.RouteMaps.load(*paths)
    print("reload identical:", all(a == b for a, b in zip(maps, reloaded)))

# %%
# A coarser segment length trades detail for size.
for h in (5.0, 10.0, 20.0, 40.0):
    m = glomap.build_map(survey.s, survey.mag_magnitude, h)
    rms = np.sqrt(np.mean((m(survey.s) - survey.mag_magnitude) ** 2))
    print(f"h = {h:4.0f} m: {m.n_fits:4d} fits, RMS {rms:.3f} uT")
