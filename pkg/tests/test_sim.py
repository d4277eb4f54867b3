import numpy as np
import pytest

from magarc import geo_frame, kinematics as kin, sim
from magarc.errors import InvalidImuTruth
from magarc.kinematics import NoiseParams


def quiet_imu(**kw):
    zeros = np.zeros(3)
    base = dict(beta_g_true=zeros, beta_a_true=zeros, k_g_true=zeros, k_a_true=np.ones(3),
                noise=NoiseParams(0.0, 0.0, 0.0, 0.0))
    base.update(kw)
    return sim.ImuTruth(**base)


class TestTrajectory:
    def test_straight_two_waypoints(self):
        traj = sim.gen_trajectory(sim.RouteSpec([[0, 0], [100, 0]], speed=10.0, sample_dt=0.1))
        assert len(traj.t) == 101
        assert np.allclose(traj.xy[:, 1], 0.0) and np.allclose(traj.a, 0.0)
        assert traj.s[-1] == pytest.approx(100.0)

    def test_fillet_centripetal_acceleration(self):
        square = [[0, 0], [200, 0], [200, 200], [0, 200], [0, 0]]
        traj = sim.gen_trajectory(sim.RouteSpec(square, speed=8.0, corner_radius=25.0))
        amag = np.hypot(*traj.a.T)
        turning = np.abs(traj.curvature) > 0
        assert np.allclose(amag[turning], 8.0**2 / 25.0)
        assert np.allclose(amag[~turning], 0.0)

    def test_default_length(self):
        traj = sim.gen_trajectory(sim.RouteSpec(sim.default_waypoints()))
        assert abs(geo_frame.cumulative_arclength(traj.xy)[-1] - 3000.0) < 3.0

    def test_speed_modulation(self):
        spec = sim.RouteSpec([[0, 0], [500, 0]], speed=10.0, speed_amplitude=2.0, speed_period=20.0)
        traj = sim.gen_trajectory(spec)
        assert traj.speed.max() == pytest.approx(12.0, abs=1e-3)
        assert traj.speed.min() == pytest.approx(8.0, abs=1e-3)

    @pytest.mark.parametrize("kw", [dict(waypoints=[[0, 0]]), dict(speed=0.0), dict(speed_amplitude=20.0)])
    def test_route_validation(self, kw):
        base = dict(waypoints=[[0, 0], [100, 0]])
        base.update(kw)
        with pytest.raises(ValueError):
            sim.RouteSpec(**base)


class TestField:
    def test_no_anomalies_is_constant(self):
        xy = np.random.default_rng(0).uniform(-100, 100, (50, 2))
        assert np.all(sim.gen_field(xy, sim.FieldSpec(base=47.0, n_anomalies=0)) == 47.0)

    def test_single_bump_peak(self):
        spec = sim.FieldSpec(base=48.0, anomalies=(sim.Anomaly((50.0, 0.0), 2.5, 10.0),))
        xy = np.column_stack([np.linspace(0, 100, 1001), np.zeros(1001)])
        f = sim.gen_field(xy, spec)
        assert f.max() == pytest.approx(50.5) and xy[np.argmax(f), 0] == pytest.approx(50.0)

    def test_deterministic(self):
        xy = np.column_stack([np.linspace(0, 500, 200), np.zeros(200)])
        a = sim.gen_field(xy, sim.FieldSpec(seed=3))
        b = sim.gen_field(xy, sim.FieldSpec(seed=3))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, sim.gen_field(xy, sim.FieldSpec(seed=4)))


@pytest.fixture(scope="module")
def traj():
    square = [[0, 0], [150, 0], [150, 150], [0, 150]]
    return sim.gen_trajectory(sim.RouteSpec(square, speed=8.0, speed_amplitude=1.0, speed_period=15.0))


class TestImu:
    def test_identity_corruption(self, traj):
        samples = sim.synth_imu(traj, quiet_imu(), gravity_free=True)
        yaw_rate = np.diff(traj.yaw) / np.diff(traj.t)
        assert np.allclose([s.omega_meas[2] for s in samples], yaw_rate)
        c = kin.dcm(kin.quat_from_yaw(traj.yaw[10]))
        a_loc = np.r_[(traj.v[11] - traj.v[10]) / 0.1, 0.0]
        assert np.allclose(samples[10].accel_meas, c @ a_loc)

    def test_correct_with_truth_inverts(self, traj):
        imu = quiet_imu(beta_g_true=[1e-3, -2e-3, 3e-3], beta_a_true=[0.2, -0.1, 0.05],
                        k_g_true=[0.01, 0.0, -0.02], k_a_true=[1.05, 0.95, 1.0])
        raw = sim.synth_imu(traj, imu)
        clean = sim.synth_imu(traj, quiet_imu())
        state = sim.truth_state(traj, 0, imu)
        for r, c in zip(raw[::50], clean[::50]):
            w, a = kin.correct_imu(r, state)
            assert np.allclose(w, c.omega_meas, atol=1e-12) and np.allclose(a, c.accel_meas, atol=1e-12)

    def test_propagation_reproduces_truth(self, traj):
        samples = sim.synth_imu(traj, quiet_imu())
        state = sim.truth_state(traj, 0)
        for s, t_prev in zip(samples, traj.t):
            state = kin.propagate(state, s, s.timestamp - t_prev)
        # exact on straights; the heading change inside each turning step leaves a few 1e-4 m
        assert np.allclose(state.p[:2], traj.xy[-1], atol=1e-3)

    def test_bias_drift_vs_known_bias(self, traj):
        imu = quiet_imu(beta_a_true=[0.2, -0.1, 0.0], k_a_true=[1.05, 0.95, 1.0])
        samples = sim.synth_imu(traj, imu)[:100]
        distance = traj.s[100] - traj.s[0]
        for start, tol in ((sim.truth_state(traj, 0), None), (sim.truth_state(traj, 0, imu), 0.005)):
            state = start
            for s, t_prev in zip(samples, traj.t):
                state = kin.propagate(state, s, s.timestamp - t_prev)
            err = np.hypot(*(state.p[:2] - traj.xy[100]))
            if tol is None:
                assert err > 0.01 * distance
            else:
                assert err < tol * distance

    def test_invalid_scale(self):
        with pytest.raises(InvalidImuTruth):
            quiet_imu(k_a_true=[1.0, 1.7, 1.0])


class TestMagNoise:
    def test_zero_sigma_identity(self):
        v = np.linspace(40, 50, 10)
        assert np.array_equal(sim.add_mag_noise(v, 0.0), v)

    def test_variance(self):
        noise = sim.add_mag_noise(np.zeros(10_000), 0.1, seed=2)
        assert abs(noise.var() / 0.01 - 1.0) < 0.05

    def test_default_sigma(self):
        assert sim.Scenario().mag_sigma == 0.1


class TestSimulate:
    def test_default_sizes(self, default_run):
        n = len(default_run.truth.t)
        assert 3550 < n < 3650
        assert len(default_run.imu) == n - 1 and default_run.mag_values.shape == (n,)
        assert len(default_run.survey) == n

    def test_deterministic(self):
        small = sim.Scenario(route=sim.RouteSpec([[0, 0], [300, 0]]), seed=5)
        a, b = sim.simulate(small), sim.simulate(small)
        assert np.array_equal(a.mag_values, b.mag_values)
        assert all(np.array_equal(x.accel_meas, y.accel_meas) for x, y in zip(a.imu, b.imu))

    def test_seeds_change_noise_only(self):
        route = sim.RouteSpec([[0, 0], [300, 0]])
        a = sim.simulate(sim.Scenario(route=route, seed=1))
        b = sim.simulate(sim.Scenario(route=route, seed=2))
        assert np.array_equal(a.survey.mag_magnitude, b.survey.mag_magnitude)
        assert not np.array_equal(a.mag_values, b.mag_values)

    def test_survey_round_trips_through_geo_frame(self, default_run):
        latlon, mag = sim.synthesize_survey_geo(default_run.survey)
        track = geo_frame.local_track(default_run.survey.timestamp, latlon, mag, sim.DEFAULT_ANCHOR)
        assert np.allclose(track.xy, default_run.survey.xy, atol=1e-6)
        assert np.allclose(track.mag_magnitude, default_run.survey.mag_magnitude)

    def test_map_fit_quality(self, default_run, default_maps):
        s = default_run.survey.s
        rms = np.sqrt(np.mean((default_maps.magnitude(s) - default_run.survey.mag_magnitude) ** 2))
        assert rms < 0.05
