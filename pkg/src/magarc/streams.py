"""CSV readers and writers for the IMU, magnetometer, truth and run-report streams."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import _csvio
from .errors import InputError
from .kinematics import ImuSample

IMU_COLUMNS = ["t", "wx", "wy", "wz", "ax", "ay", "az"]
MAG_COLUMNS = ["t", "bmag"]
TRUTH_COLUMNS = ["t", "x", "y", "s", "yaw", "vx", "vy"]


def write_imu(path, samples) -> None:
    rows = ((s.timestamp, *s.omega_meas, *s.accel_meas) for s in samples)
    _csvio.write_table(path, IMU_COLUMNS, rows)


def read_imu(path) -> list[ImuSample]:
    cols = _csvio.read_table(path, IMU_COLUMNS)
    t = cols["t"]
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        raise InputError(f"{path}:{int(bad[0]) + 3}: IMU timestamps must be strictly increasing")
    omega = np.column_stack([cols["wx"], cols["wy"], cols["wz"]])
    accel = np.column_stack([cols["ax"], cols["ay"], cols["az"]])
    return [ImuSample(float(ti), w, a) for ti, w, a in zip(t, omega, accel)]


def write_mag(path, t, values) -> None:
    _csvio.write_table(path, MAG_COLUMNS, zip(t, values))


def read_mag(path):
    cols = _csvio.read_table(path, MAG_COLUMNS)
    bad = np.flatnonzero(np.diff(cols["t"]) <= 0)
    if bad.size:
        raise InputError(f"{path}:{int(bad[0]) + 3}: magnetometer timestamps must be strictly increasing")
    return cols["t"], cols["bmag"]


def write_truth(path, traj) -> None:
    rows = zip(traj.t, traj.xy[:, 0], traj.xy[:, 1], traj.s, traj.yaw, traj.v[:, 0], traj.v[:, 1])
    _csvio.write_table(path, TRUTH_COLUMNS, rows)


def read_truth(path) -> dict[str, np.ndarray]:
    cols = _csvio.read_table(path, TRUTH_COLUMNS)
    if cols["t"].size == 0:
        raise InputError(f"{path}:2: truth file has no rows")
    return cols


def write_report(directory, report, stem="report") -> dict[str, Path]:
    """Write the run report and its companion logs; returns the paths by kind."""
    from .ekf import ACCEL_COLUMNS, CAL_COLUMNS, CANDIDATE_COLUMNS, REPORT_COLUMNS

    directory = Path(directory)
    paths = {
        "report": directory / f"{stem}.csv",
        "calibration": directory / f"{stem}_calibration.csv",
        "candidates": directory / f"{stem}_candidates.csv",
        "accel": directory / f"{stem}_accel.csv",
    }
    _csvio.write_table(paths["report"], list(REPORT_COLUMNS), report.rows)
    _csvio.write_table(paths["calibration"], list(CAL_COLUMNS), report.cal_rows)
    _csvio.write_table(paths["candidates"], list(CANDIDATE_COLUMNS), report.candidate_rows)
    _csvio.write_table(paths["accel"], list(ACCEL_COLUMNS), report.accel_rows)
    return paths


def read_report(path) -> dict[str, np.ndarray]:
    from .ekf import EVENTS, REPORT_COLUMNS

    cols = _csvio.read_table(path, list(REPORT_COLUMNS), text_columns=("event",), allow_nan=True)
    for i, ev in enumerate(cols["event"]):
        if ev not in EVENTS:
            raise InputError(f"{path}:{i + 2}: unknown event {ev!r}")
    return cols
