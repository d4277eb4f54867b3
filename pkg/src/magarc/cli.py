"""``magarc`` command line: simulate, map-build, localize, plot-data.

Exit codes: 0 success, 2 input error, 3 constraint violation, 4 internal
failure.
"""

from __future__ import annotations

import argparse
import math
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path

import numpy as np

from . import _csvio, config, ekf, geo_frame, glomap, sim, streams
from .errors import ConstraintError, InputError, MagArcError
from .kinematics import NavState, quat_from_yaw

EXIT_OK, EXIT_INPUT, EXIT_CONSTRAINT, EXIT_INTERNAL = 0, 2, 3, 4
MAP_STEM = "map"


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@contextmanager
def _output_dir(out):
    """Stage outputs in a temporary sibling directory, then move them into ``out``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield stage
        if not out.exists():
            os.replace(stage, out)
        else:
            for item in stage.iterdir():
                os.replace(item, out / item.name)
    finally:
        if stage.exists():
            shutil.rmtree(stage)


def _manifest(stage, command, inputs, out, config_path, seed):
    _csvio.write_keyvalue(stage / "manifest.txt", {
        "command": command,
        "inputs": " ".join(str(p) for p in inputs) or "none",
        "out": str(out),
        "config": str(config_path) if config_path else "none",
        "seed": seed,
        "version": _version(),
    })


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise InputError(f"{p}: no such file or directory")


def cmd_simulate(args) -> int:
    _require(args.config)
    values = config.scenario_values(args.config)
    scenario = config.scenario_from_values(values, args.seed)
    run = sim.simulate(scenario)
    latlon, mag_xyz = sim.synthesize_survey_geo(run.survey, scenario.anchor)
    with _output_dir(args.out) as stage:
        geo_frame.write_survey(stage / "survey.csv", run.survey.timestamp, latlon, mag_xyz)
        streams.write_imu(stage / "imu.csv", run.imu)
        streams.write_mag(stage / "mag.csv", run.mag_t, run.mag_values)
        streams.write_truth(stage / "truth.csv", run.truth)
        config.write_values(stage / "scenario.txt", values)
        _manifest(stage, "simulate", [args.config] if args.config else [], args.out, args.config, args.seed)
    print(f"simulated {run.truth.s[-1]:.1f} m over {run.truth.t[-1]:.1f} s: "
          f"{len(run.survey)} survey rows, {len(run.imu)} IMU rows, {len(run.mag_t)} magnetometer rows")
    return EXIT_OK


def cmd_map_build(args) -> int:
    _require(args.survey)
    track, anchor = geo_frame.read_survey(args.survey)
    maps = glomap.RouteMaps.from_track(track.s, track.mag_magnitude, track.xy, args.h)
    with _output_dir(args.out) as stage:
        maps.save(stage, MAP_STEM)
        _csvio.write_keyvalue(stage / "anchor.txt", {"lat": anchor[0], "lon": anchor[1]})
        _manifest(stage, "map-build", [args.survey], args.out, None, 0)
    for m, values in zip(maps, (track.mag_magnitude, track.xy[:, 0], track.xy[:, 1])):
        rms = float(np.sqrt(np.mean((m(track.s) - values) ** 2)))
        print(f"{m.value_label}: {m.n_fits} fits, RMS {rms:.4g} {m.value_units}")
    return EXIT_OK


def _load_maps(directory) -> glomap.RouteMaps:
    d = Path(directory)
    paths = [d / f"{MAP_STEM}_{label}.map" for label in ("magnitude", "x", "y")]
    _require(*paths)
    return glomap.RouteMaps.load(*paths)


def _initial_from_maps(maps, speed):
    s0 = maps.s_min
    p0, p1 = maps.position(s0), maps.position(min(s0 + 1.0, maps.s_max))
    yaw = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
    return NavState(q=quat_from_yaw(yaw), p=np.array([p0[0], p0[1], 0.0]),
                   v=np.array([speed * math.cos(yaw), speed * math.sin(yaw), 0.0]))


def cmd_localize(args) -> int:
    _require(args.imu, args.mag, args.truth, args.config)
    maps = _load_maps(args.maps)
    values = config.filter_values(args.config)
    cfg = config.filter_from_values(values)
    imu = streams.read_imu(args.imu)
    if not imu:
        raise InputError(f"{args.imu}:2: IMU log has no rows")
    if args.mag is None:
        print("warning: no magnetometer stream given, dead reckoning only", file=sys.stderr)
        mag_t, mag_v = np.empty(0), np.empty(0)
    else:
        mag_t, mag_v = streams.read_mag(args.mag)
    t0 = imu[0].timestamp - cfg.imu_interval
    truth = None
    if args.truth is not None:
        cols = streams.read_truth(args.truth)
        truth = (cols["t"], np.column_stack([cols["x"], cols["y"]]))
        k = int(np.argmin(np.abs(cols["t"] - t0)))
        start = NavState(q=quat_from_yaw(cols["yaw"][k]), p=np.array([cols["x"][k], cols["y"][k], 0.0]),
                         v=np.array([cols["vx"][k], cols["vy"][k], 0.0]))
        t0 = float(cols["t"][k])
        rng = sim.rng_for(args.seed, 4)
    else:
        start = _initial_from_maps(maps, args.speed / 3.6)
        rng = None
    initial = ekf.initial_state(start, cfg, t0, rng)
    report = ekf.run_filter(imu, mag_t, mag_v, maps, cfg, initial, truth)
    with _output_dir(args.out) as stage:
        streams.write_report(stage, report)
        config.write_values(stage / "run_config.txt", values)
        inputs = [p for p in (args.imu, args.mag, args.truth) if p is not None]
        _manifest(stage, "localize", [args.maps, *inputs], args.out, args.config, args.seed)
    print(f"updates: mag {report.count('mag_update')} (rejected {report.count('mag_reject')}), "
          f"accel {report.count('acc_update')} (skipped {report.count('acc_skip')})")
    dev = report.deviation()
    if dev.size:
        print(f"deviation vs truth: mean {dev.mean():.3f} m, max {dev.max():.3f} m")
    return EXIT_OK


PLOT_FILES = {
    "trajectory": ["t", "x", "y", "x_true", "y_true"],
    "covariance": ["t", "trace_Ppos", "event"],
    "acceleration": ["t", "ax_raw", "ay_raw", "ax_corr", "ay_corr"],
}


def cmd_plot_data(args) -> int:
    _require(args.report)
    cols = streams.read_report(args.report)
    accel_path = Path(args.accel) if args.accel else Path(args.report).with_name(
        Path(args.report).stem + "_accel.csv")
    accel = None
    if accel_path.exists():
        accel = _csvio.read_table(accel_path, PLOT_FILES["acceleration"])
    predict = cols["event"] == "predict"
    with _output_dir(args.out) as stage:
        _csvio.write_table(stage / "trajectory.csv", PLOT_FILES["trajectory"],
                           zip(*(cols[c][predict] for c in PLOT_FILES["trajectory"])))
        _csvio.write_table(stage / "covariance.csv", PLOT_FILES["covariance"],
                           zip(cols["t"], cols["trace_Ppos"], cols["event"]))
        rows = zip(*(accel[c] for c in PLOT_FILES["acceleration"])) if accel is not None else []
        _csvio.write_table(stage / "acceleration.csv", PLOT_FILES["acceleration"], rows)
        _manifest(stage, "plot-data", [args.report], args.out, None, 0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magarc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("simulate", help="simulate a survey pass and a drive")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("map-build", help="fit magnitude, x and y maps to a survey CSV")
    p.add_argument("survey", type=Path)
    p.add_argument("--h", type=float, default=10.0, help="segment length in meters")
    common(p, config=False)
    p.set_defaults(func=cmd_map_build)

    p = sub.add_parser("localize", help="run the filter over IMU and magnetometer logs")
    p.add_argument("--maps", type=Path, required=True, help="directory written by map-build")
    p.add_argument("--imu", type=Path, required=True)
    p.add_argument("--mag", type=Path)
    p.add_argument("--truth", type=Path)
    p.add_argument("--speed", type=float, default=30.0, help="initial speed in km/h when no truth is given")
    common(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("plot-data", help="per-figure CSVs from a run report")
    p.add_argument("report", type=Path)
    p.add_argument("--accel", type=Path, help="acceleration log (default: <report>_accel.csv)")
    common(p, config=False)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except MagArcError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
