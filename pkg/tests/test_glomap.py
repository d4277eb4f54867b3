import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magarc import glomap
from magarc.errors import DomainError, MapFormatError, OutOfMapRange, RankDeficient, TrackTooShort


def _dense_track(length=200.0, step=0.25):
    s = np.arange(0.0, length + 1e-9, step)
    return s


class TestWeight:
    @pytest.mark.parametrize("s, expected", [(0.0, 1.0), (-1.0, 0.0), (1.0, 0.0), (0.5, 0.5), (-0.5, 0.5)])
    def test_values(self, s, expected):
        assert glomap.weight(s) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("s", [1.0 + 1e-9, -1.5, np.nan])
    def test_outside_domain(self, s):
        with pytest.raises(DomainError):
            glomap.weight(s)

    def test_partition_of_unity_grid(self):
        u = np.linspace(0.0, 1.0, 1_000_001)
        total = glomap.weight(u) + glomap.weight(u - 1.0)
        assert np.max(np.abs(total - 1.0)) < 1e-12

    def test_smooth_at_center(self):
        # derivative vanishes at both ends of the half-domains
        eps = 1e-6
        for s0 in (0.0, 1.0 - eps, -1.0 + eps):
            lo, hi = max(-1.0, s0 - eps), min(1.0, s0 + eps)
            slope = (glomap.weight(hi) - glomap.weight(lo)) / (hi - lo)
            assert abs(slope) < 1e-4

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 1.0))
    def test_partition_of_unity_property(self, u):
        assert abs(glomap.weight(u) + glomap.weight(u - 1.0) - 1.0) < 1e-12


class TestFitLocal:
    def test_reproduces_cubic(self):
        s = np.linspace(5.0, 25.0, 41)
        f = lambda x: 0.3 - 0.2 * x + 0.01 * x**2 - 4e-4 * x**3
        fit = glomap.fit_local(s, f(s), 5.0, 20.0)
        probe = np.linspace(5.0, 25.0, 7)
        assert np.allclose(fit(probe), f(probe), atol=1e-10)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficient):
            glomap.fit_local(np.array([1.0, 1.0, 2.0, 2.0]), np.zeros(4), 0.0, 20.0)

    def test_least_squares_against_numpy_polyfit(self):
        rng = np.random.default_rng(3)
        s = np.sort(rng.uniform(0, 20, 50))
        y = np.sin(s / 3.0) + rng.normal(0, 0.01, 50)
        fit = glomap.fit_local(s, y, 0.0, 20.0)
        ref = np.polynomial.Polynomial.fit(s, y, 3)
        assert np.allclose(fit(s), ref(s), atol=1e-10)


class TestBuildMap:
    def test_fit_count(self):
        s = _dense_track(3000.0, 1.0)
        m = glomap.build_map(s, np.zeros_like(s), 10.0)
        assert m.n_fits == 299

    def test_exact_cubic_reproduction(self):
        s = _dense_track(300.0, 0.5)
        f = lambda x: 48.0 + 0.02 * x - 3e-4 * x**2 + 1e-6 * x**3
        m = glomap.build_map(s, f(s), 10.0)
        probe = np.linspace(0.0, 300.0, 10_001)
        assert np.max(np.abs(m(probe) - f(probe))) < 1e-8

    def test_continuity_at_knots(self):
        s = _dense_track(200.0, 0.5)
        m = glomap.build_map(s, np.sin(s / 7.0), 10.0)
        knots = np.arange(10.0, 200.0, 10.0)
        left, right = m(knots - 1e-9), m(knots + 1e-9)
        assert np.max(np.abs(left - right)) < 1e-7

    def test_fits_smooth_signal(self):
        s = _dense_track(500.0, 0.25)
        y = np.sin(s / 15.0) + 0.5 * np.cos(s / 40.0)
        m = glomap.build_map(s, y, 10.0)
        assert np.sqrt(np.mean((m(s) - y) ** 2)) < 1e-3

    def test_track_too_short(self):
        s = np.linspace(0.0, 15.0, 30)
        with pytest.raises(TrackTooShort):
            glomap.build_map(s, s, 10.0)

    def test_out_of_range(self):
        s = _dense_track(100.0)
        m = glomap.build_map(s, s, 10.0)
        with pytest.raises(OutOfMapRange):
            m(100.5)
        with pytest.raises(OutOfMapRange):
            m(np.array([10.0, -1.0]))

    def test_sparse_window_is_rank_deficient(self):
        s = np.concatenate([np.linspace(0.0, 20.0, 40), [30.0], np.linspace(45.0, 100.0, 80)])
        with pytest.raises(RankDeficient):
            glomap.build_map(s, s, 10.0)

    def test_unsorted_input(self):
        s = _dense_track(100.0)
        order = np.random.default_rng(0).permutation(s.size)
        assert glomap.build_map(s[order], np.sin(s)[order], 10.0) == glomap.build_map(s, np.sin(s), 10.0)

    def test_batch_eval_matches_pointwise(self):
        s = _dense_track(100.0)
        m = glomap.build_map(s, np.cos(s / 5.0), 10.0)
        batch = glomap.eval_map_batch(m, 12.0, 0.8, 30)
        assert np.array_equal(batch, m(12.0 + 0.8 * np.arange(30)))


class TestMapFile:
    def _map(self):
        s = _dense_track(120.0, 0.3)
        return glomap.build_map(s, 48 + np.sin(s / 9.0), 10.0, "magnitude", "uT")

    def test_round_trip_bit_exact(self, tmp_path):
        m = self._map()
        p1, p2 = tmp_path / "a.map", tmp_path / "b.map"
        glomap.save_map(m, p1)
        loaded = glomap.load_map(p1)
        assert loaded == m
        probe = np.linspace(0, 120, 999)
        assert np.array_equal(loaded(probe), m(probe))
        glomap.save_map(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header(self, tmp_path):
        glomap.save_map(self._map(), tmp_path / "a.map")
        head = (tmp_path / "a.map").read_text().splitlines()[0].split()
        assert head[:4] == ["MAGARC-MAP", "v1", "magnitude", "uT"]
        assert head[4] == "h=10.0"

    @pytest.mark.parametrize(
        "mutate, field",
        [
            (lambda L: ["NOTAMAP v1"] + L[1:], "magic"),
            (lambda L: [L[0].replace("v1", "v9")] + L[1:], "version"),
            (lambda L: [L[0].replace("h=10.0", "h=abc")] + L[1:], "h"),
            (lambda L: L[:-1], "fits"),
            (lambda L: L[:2] + [L[2].replace(L[2].split()[1], "zz")] + L[3:], "c0"),
        ],
    )
    def test_malformed(self, tmp_path, mutate, field):
        path = tmp_path / "a.map"
        glomap.save_map(self._map(), path)
        path.write_text("\n".join(mutate(path.read_text().splitlines())) + "\n")
        with pytest.raises(MapFormatError) as info:
            glomap.load_map(path)
        assert info.value.field == field


def test_route_maps_position(default_maps, default_run):
    xy = default_maps.position(default_run.survey.s[::50])
    assert np.max(np.hypot(*(xy - default_run.survey.xy[::50]).T)) < 0.05
