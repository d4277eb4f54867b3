"""Local planar frame and arc-length coordinates for geo-referenced survey logs.

The local frame is an equirectangular projection about an anchor point with
x pointing east and y pointing north.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _csvio
from .errors import EmptyLog, FrameDistortion, InputError

EARTH_RADIUS = 6_371_000.0  # m
MAX_ANCHOR_OFFSET_DEG = 1.0

SURVEY_COLUMNS = ["t", "lat", "lon", "bx", "by", "bz"]


@dataclass(frozen=True)
class GeoSample:
    timestamp: float
    lat: float
    lon: float
    mag_xyz: tuple[float, float, float]


@dataclass(frozen=True)
class LocalTrack:
    """A survey log expressed in the local frame.

    Attributes
    ----------
    timestamp : (n,) array
        Seconds.
    xy : (n, 2) array
        Local east/north position in meters.
    s : (n,) array
        Cumulative arc length in meters, ``s[0] == 0``.
    mag_magnitude : (n,) array
        Magnetic field magnitude in microtesla.
    """

    timestamp: np.ndarray
    xy: np.ndarray
    s: np.ndarray
    mag_magnitude: np.ndarray

    def __len__(self):
        return len(self.s)


def _as_latlon(samples) -> np.ndarray:
    if len(samples) == 0:
        raise EmptyLog("no samples to project")
    if isinstance(samples[0], GeoSample):
        latlon = np.array([(g.lat, g.lon) for g in samples], dtype=float)
    else:
        latlon = np.asarray(samples, dtype=float).reshape(-1, 2)
    if np.any(np.abs(latlon[:, 0]) > 90) or np.any(np.abs(latlon[:, 1]) > 180):
        raise InputError("latitude/longitude out of range")
    return latlon


def to_local_frame(samples, anchor=None) -> np.ndarray:
    """Project samples onto the local east/north plane.

    Parameters
    ----------
    samples : sequence of GeoSample or (n, 2) array-like of (lat, lon) degrees
    anchor : (lat, lon) degrees, optional
        Origin of the local frame. Defaults to the first sample.

    Returns
    -------
    (n, 2) array of (x, y) meters.
    """
    latlon = _as_latlon(samples)
    lat0, lon0 = latlon[0] if anchor is None else np.asarray(anchor, dtype=float)
    dlat = latlon[:, 0] - lat0
    dlon = latlon[:, 1] - lon0
    if np.any(np.abs(dlat) > MAX_ANCHOR_OFFSET_DEG) or np.any(np.abs(dlon) > MAX_ANCHOR_OFFSET_DEG):
        raise FrameDistortion(
            f"sample farther than {MAX_ANCHOR_OFFSET_DEG} deg from anchor ({lat0}, {lon0})"
        )
    x = EARTH_RADIUS * np.cos(np.radians(lat0)) * np.radians(dlon)
    y = EARTH_RADIUS * np.radians(dlat)
    return np.column_stack([x, y])


def from_local_frame(xy, anchor) -> np.ndarray:
    """Inverse of :func:`to_local_frame`; returns (n, 2) (lat, lon) degrees."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    lat0, lon0 = (float(a) for a in anchor)
    lat = lat0 + np.degrees(xy[:, 1] / EARTH_RADIUS)
    lon = lon0 + np.degrees(xy[:, 0] / (EARTH_RADIUS * np.cos(np.radians(lat0))))
    return np.column_stack([lat, lon])


def cumulative_arclength(xy) -> np.ndarray:
    """Cumulative Euclidean path length, starting at zero."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    steps = np.hypot(*np.diff(xy, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(steps)])


def local_track(timestamp, latlon, mag_xyz, anchor=None) -> LocalTrack:
    timestamp = np.asarray(timestamp, dtype=float)
    if timestamp.size == 0:
        raise EmptyLog("survey log is empty")
    if np.any(np.diff(timestamp) <= 0):
        raise InputError("survey timestamps must be strictly increasing")
    xy = to_local_frame(latlon, anchor)
    mag = np.linalg.norm(np.asarray(mag_xyz, dtype=float).reshape(-1, 3), axis=1)
    return LocalTrack(timestamp, xy, cumulative_arclength(xy), mag)


def read_survey(path, anchor=None) -> tuple[LocalTrack, tuple[float, float]]:
    """Load a ``t,lat,lon,bx,by,bz`` survey CSV into a LocalTrack.

    Returns the track and the anchor actually used.
    """
    cols = _csvio.read_table(path, SURVEY_COLUMNS)
    if cols["t"].size == 0:
        raise EmptyLog(f"{path}: survey has no rows")
    latlon = np.column_stack([cols["lat"], cols["lon"]])
    if anchor is None:
        anchor = (float(latlon[0, 0]), float(latlon[0, 1]))
    mag = np.column_stack([cols["bx"], cols["by"], cols["bz"]])
    return local_track(cols["t"], latlon, mag, anchor), anchor


def write_survey(path, timestamp, latlon, mag_xyz) -> None:
    latlon = np.asarray(latlon, dtype=float)
    mag_xyz = np.asarray(mag_xyz, dtype=float)
    rows = (
        (t, la, lo, bx, by, bz)
        for t, (la, lo), (bx, by, bz) in zip(timestamp, latlon, mag_xyz)
    )
    _csvio.write_table(path, SURVEY_COLUMNS, rows)
