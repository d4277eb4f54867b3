import csv
import re

import numpy as np
import pytest

from magarc import cli, streams

SMALL = "route = straight\nroute_length = 400\n"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def small_sim(tmp_path_factory):
    base = tmp_path_factory.mktemp("small")
    cfg = base / "scenario.txt"
    cfg.write_text(SMALL)
    assert cli.main(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(base / "sim")]) == 0
    assert cli.main(["map-build", str(base / "sim" / "survey.csv"), "--out", str(base / "maps")]) == 0
    return base


@pytest.fixture(scope="module")
def default_pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("default")
    assert cli.main(["simulate", "--out", str(base / "sim")]) == 0
    assert cli.main(["map-build", str(base / "sim" / "survey.csv"), "--out", str(base / "maps")]) == 0
    sim_dir = base / "sim"
    code = cli.main(["localize", "--maps", str(base / "maps"), "--imu", str(sim_dir / "imu.csv"),
                     "--mag", str(sim_dir / "mag.csv"), "--truth", str(sim_dir / "truth.csv"),
                     "--out", str(base / "run")])
    assert code == 0
    assert cli.main(["plot-data", str(base / "run" / "report.csv"), "--out", str(base / "plots")]) == 0
    return base


class TestSimulate:
    def test_outputs(self, small_sim):
        names = {p.name for p in (small_sim / "sim").iterdir()}
        assert {"survey.csv", "imu.csv", "mag.csv", "truth.csv", "manifest.txt", "scenario.txt"} <= names

    def test_default_row_counts(self, default_pipeline):
        n = len(rows(default_pipeline / "sim" / "truth.csv"))
        assert 3550 < n < 3650
        assert len(rows(default_pipeline / "sim" / "survey.csv")) == n

    def test_same_seed_identical_files(self, small_sim, tmp_path):
        cfg = small_sim / "scenario.txt"
        cli.main(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "again")])
        for name in ("survey.csv", "imu.csv", "mag.csv", "truth.csv"):
            assert (tmp_path / "again" / name).read_bytes() == (small_sim / "sim" / name).read_bytes()

    def test_manifest(self, small_sim):
        text = (small_sim / "sim" / "manifest.txt").read_text()
        assert "command = simulate" in text and "seed = 1" in text

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["simulate", "--config", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o")]) == 2
        assert "nope.txt" in capsys.readouterr().err

    def test_bad_field(self, tmp_path, capsys):
        cfg = tmp_path / "bad.txt"
        cfg.write_text("speed_kmh = fast\n")
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "speed_kmh" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()


class TestMapBuild:
    def test_three_maps_and_rms(self, default_pipeline, capsys, tmp_path):
        cli.main(["map-build", str(default_pipeline / "sim" / "survey.csv"), "--out", str(tmp_path / "m")])
        out = capsys.readouterr().out
        rms = float(re.search(r"magnitude: \d+ fits, RMS ([0-9.e-]+)", out).group(1))
        assert rms < 0.05
        for label in ("magnitude", "x", "y"):
            assert (tmp_path / "m" / f"map_{label}.map").read_bytes() == \
                (default_pipeline / "maps" / f"map_{label}.map").read_bytes()

    def test_h_too_large(self, small_sim, tmp_path):
        code = cli.main(["map-build", str(small_sim / "sim" / "survey.csv"), "--h", "250", "--out", str(tmp_path / "m")])
        assert code == 3

    def test_malformed_survey(self, tmp_path, capsys):
        p = tmp_path / "survey.csv"
        p.write_text("t,lat,lon,bx,by,bz\n0,30.6,-96.3,1,2,3\n1,oops,-96.3,1,2,3\n")
        assert cli.main(["map-build", str(p), "--out", str(tmp_path / "m")]) == 2
        assert "survey.csv:3" in capsys.readouterr().err


class TestLocalize:
    def test_default_pipeline_accuracy(self, default_pipeline):
        report = rows(default_pipeline / "run" / "report.csv")
        d = [np.hypot(float(r["x"]) - float(r["x_true"]), float(r["y"]) - float(r["y_true"]))
             for r in report if r["event"] == "predict"]
        assert np.mean(d) <= 1.0

    def test_dead_reckoning_without_mag(self, small_sim, tmp_path, capsys):
        sim_dir = small_sim / "sim"
        code = cli.main(["localize", "--maps", str(small_sim / "maps"), "--imu", str(sim_dir / "imu.csv"),
                         "--truth", str(sim_dir / "truth.csv"), "--out", str(tmp_path / "dr")])
        assert code == 0
        assert "dead reckoning" in capsys.readouterr().err
        events = {r["event"] for r in rows(tmp_path / "dr" / "report.csv")}
        assert events == {"predict"}

    def test_without_truth(self, small_sim, tmp_path):
        sim_dir = small_sim / "sim"
        code = cli.main(["localize", "--maps", str(small_sim / "maps"), "--imu", str(sim_dir / "imu.csv"),
                         "--mag", str(sim_dir / "mag.csv"), "--out", str(tmp_path / "nt")])
        assert code == 0
        assert np.isnan(streams.read_report(tmp_path / "nt" / "report.csv")["x_true"]).all()

    def test_default_cadences_recorded(self, default_pipeline):
        text = (default_pipeline / "run" / "run_config.txt").read_text()
        for line in ("imu_interval = 0.1", "mag_interval = 3", "acc_interval = 6"):
            assert line in text

    def test_bad_imu_line(self, small_sim, tmp_path, capsys):
        p = tmp_path / "imu.csv"
        p.write_text("t,wx,wy,wz,ax,ay,az\n0.1,0,0,0,0,0,9.8\n0.2,0,0,x,0,0,9.8\n")
        code = cli.main(["localize", "--maps", str(small_sim / "maps"), "--imu", str(p), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "imu.csv:3" in capsys.readouterr().err

    def test_missing_maps(self, tmp_path, small_sim):
        code = cli.main(["localize", "--maps", str(tmp_path), "--imu", str(small_sim / "sim" / "imu.csv"),
                         "--out", str(tmp_path / "o")])
        assert code == 2


class TestPlotData:
    def test_three_csvs(self, default_pipeline):
        assert {p.name for p in (default_pipeline / "plots").iterdir()} >= {
            "trajectory.csv", "covariance.csv", "acceleration.csv"}

    def test_covariance_drops_at_mag_updates(self, default_pipeline):
        cov = rows(default_pipeline / "plots" / "covariance.csv")
        for prev, row in zip(cov, cov[1:]):
            if row["event"] == "mag_update":
                assert float(row["trace_Ppos"]) < float(prev["trace_Ppos"])

    def test_corrected_acceleration_is_quieter(self, default_pipeline):
        acc = rows(default_pipeline / "plots" / "acceleration.csv")
        raw = np.array([[float(r["ax_raw"]), float(r["ay_raw"])] for r in acc])
        cor = np.array([[float(r["ax_corr"]), float(r["ay_corr"])] for r in acc])
        assert np.sqrt(np.mean(cor**2)) < np.sqrt(np.mean(raw**2))

    def test_empty_report(self, tmp_path):
        p = tmp_path / "report.csv"
        p.write_text("t,x,y,x_true,y_true,trace_Ppos,event\n")
        assert cli.main(["plot-data", str(p), "--out", str(tmp_path / "o")]) == 0
        for name in ("trajectory.csv", "covariance.csv", "acceleration.csv"):
            text = (tmp_path / "o" / name).read_text().splitlines()
            assert len(text) == 1 and text[0].startswith("t,")

    def test_malformed_report(self, tmp_path):
        p = tmp_path / "report.csv"
        p.write_text("t,x,y\n1,2,3\n")
        assert cli.main(["plot-data", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_inputs_untouched(self, default_pipeline, tmp_path):
        src = default_pipeline / "run" / "report.csv"
        before = src.read_bytes()
        cli.main(["plot-data", str(src), "--out", str(tmp_path / "p")])
        assert src.read_bytes() == before
