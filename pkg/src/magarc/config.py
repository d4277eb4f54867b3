"""Plain-text ``key = value`` configuration for simulation scenarios and the filter."""

from __future__ import annotations

import dataclasses

import numpy as np

from . import _csvio, sim
from .ekf import FilterConfig
from .errors import InputError
from .kinematics import NoiseParams

_NOISE_KEYS = ("sigma_gv", "sigma_gu", "sigma_av", "sigma_au")

SCENARIO_DEFAULTS = {
    "route": "default",  # "default" (turning route) or "straight"
    "route_length": 3000.0,
    "speed_kmh": 30.0,
    "speed_amplitude_kmh": 0.0,
    "speed_period": 60.0,
    "corner_radius": 20.0,
    "sample_dt": 0.1,
    "field_base": 48.0,
    "n_anomalies": 400,
    "amplitude_min": 0.5,
    "amplitude_max": 3.0,
    "length_scale_min": 10.0,
    "length_scale_max": 30.0,
    "lateral_offset": 15.0,
    "field_seed": 0,
    "mag_sigma": 0.1,
    "mag_mode": "independent",
    "map_h": 10.0,
    "gravity_free": False,
    "anchor_lat": sim.DEFAULT_ANCHOR[0],
    "anchor_lon": sim.DEFAULT_ANCHOR[1],
    "gyro_bias": (0.0, 0.0, 2e-3),
    "accel_bias": (0.2, -0.1, 0.0),
    "gyro_scale_error": (0.0, 0.0, 0.0),
    "accel_scale": (1.05, 0.95, 1.0),
    "sigma_gv": 1e-4,
    "sigma_gu": 1e-5,
    "sigma_av": 0.02,
    "sigma_au": 1e-4,
}


def _convert(key, raw, default, source):
    where = f"{source}: key {key!r}"
    text = raw.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise InputError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, (tuple, list, np.ndarray)):
            parts = tuple(float(p) for p in text.replace(",", " ").split())
            size = np.size(default) if not isinstance(default, np.ndarray) else default.shape[0]
            if len(parts) != size:
                raise InputError(f"{where}: expected {size} numbers, got {len(parts)}")
            return parts
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            if default is None and text.lower() in ("none", ""):
                return None
            return float(text)
    except ValueError:
        raise InputError(f"{where}: cannot parse {raw!r}") from None
    return text


def _merge(raw: dict, defaults: dict, source) -> dict:
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise InputError(f"{source}: unknown key {unknown[0]!r}")
    out = dict(defaults)
    for key, value in raw.items():
        out[key] = _convert(key, value, defaults[key], source)
    return out


def scenario_values(path=None) -> dict:
    raw = _csvio.read_keyvalue(path) if path is not None else {}
    return _merge(raw, SCENARIO_DEFAULTS, path or "<defaults>")


def scenario_from_values(values: dict, seed: int) -> sim.Scenario:
    """Build a Scenario; invalid combinations raise InputError naming the field."""
    v = values
    try:
        length = float(v["route_length"])
        if v["route"] == "default":
            waypoints = sim.default_waypoints(length, v["corner_radius"])
        elif v["route"] == "straight":
            waypoints = np.array([[0.0, 0.0], [length, 0.0]])
        else:
            raise InputError(f"route: expected 'default' or 'straight', got {v['route']!r}")
        route = sim.RouteSpec(waypoints, v["speed_kmh"] / 3.6, v["sample_dt"], v["corner_radius"],
                              v["speed_amplitude_kmh"] / 3.6, v["speed_period"])
        field_spec = sim.FieldSpec(v["field_base"], v["n_anomalies"], (v["amplitude_min"], v["amplitude_max"]),
                                   (v["length_scale_min"], v["length_scale_max"]), v["lateral_offset"],
                                   v["field_seed"])
        noise = NoiseParams(*(v[k] for k in _NOISE_KEYS))
        imu = sim.ImuTruth(np.array(v["gyro_bias"]), np.array(v["accel_bias"]), np.array(v["gyro_scale_error"]),
                           np.array(v["accel_scale"]), noise, seed)
        return sim.Scenario(route, field_spec, imu, v["mag_sigma"], v["mag_mode"], v["map_h"], v["gravity_free"],
                            (v["anchor_lat"], v["anchor_lon"]), seed)
    except InputError:
        raise
    except (ValueError, sim.GeometryError, sim.InvalidImuTruth) as exc:
        raise InputError(f"invalid scenario: {exc}") from exc


def _filter_defaults() -> dict:
    cfg = FilterConfig()
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "noise":
            for k in _NOISE_KEYS:
                out[k] = float(np.asarray(getattr(value, k))[0])
        elif isinstance(value, np.ndarray):
            out[f.name] = tuple(float(x) for x in np.diag(value))
        else:
            out[f.name] = value
    return out


def filter_values(path=None) -> dict:
    raw = _csvio.read_keyvalue(path) if path is not None else {}
    return _merge(raw, _filter_defaults(), path or "<defaults>")


def filter_from_values(values: dict) -> FilterConfig:
    kwargs = {k: v for k, v in values.items() if k not in _NOISE_KEYS}
    kwargs["noise"] = NoiseParams(*(values[k] for k in _NOISE_KEYS))
    for name in ("R_mag", "R_acc"):
        kwargs[name] = np.diag(values[name])
    try:
        return FilterConfig(**kwargs)
    except ValueError as exc:
        raise InputError(f"invalid filter configuration: {exc}") from exc


def write_values(path, values: dict) -> None:
    _csvio.write_keyvalue(path, {k: ("none" if v is None else v) for k, v in values.items()})
