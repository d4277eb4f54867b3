import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magarc import accel_cal as ac
from magarc.errors import DegenerateTiming, SkipAccelUpdate, UnobservableCalibration
from magarc.kinematics import NavState

from oracles import circle_window, cubic_window, fd_accel_partials, relative_error

K_TRUE = np.array([1.1, 0.9])
B_TRUE = np.array([0.2, -0.1])


def line_window(n=20, dt=0.1, speed=8.0, origin=(-40.0, 25.0), accel=None):
    t = np.arange(n) * dt
    xy = np.column_stack([speed * t, 0.5 * speed * t])
    acc = np.zeros((n, 2)) if accel is None else np.broadcast_to(accel, (n, 2))
    return ac.PoseWindow(t, xy, acc, origin)


class TestPoseWindow:
    def test_too_short(self):
        with pytest.raises(ValueError):
            ac.PoseWindow(np.arange(4.0), np.zeros((4, 2)), np.zeros((4, 2)))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ac.PoseWindow(np.arange(6.0), np.zeros((5, 2)), np.zeros((6, 2)))

    @pytest.mark.parametrize("t", [[0, 1, 1, 2, 3], [0, 1, 3, 2, 4]])
    def test_non_increasing_time(self, t):
        with pytest.raises(DegenerateTiming):
            ac.PoseWindow(np.array(t, float), np.zeros((5, 2)), np.zeros((5, 2)))


class TestArcKinematics:
    def test_uniform_motion(self):
        t = np.arange(10) * 0.1
        w = ac.PoseWindow(t, np.column_stack([t, 0 * t]), np.zeros((10, 2)))
        kin = ac.arc_kinematics(w)
        assert np.allclose(kin.s_dot[1:-1], 1.0, atol=1e-9)
        assert np.allclose(kin.s_ddot[1:-1], 0.0, atol=1e-9)

    def test_quadratic_from_rest(self):
        t = np.arange(1, 21) * 0.05
        w = ac.PoseWindow(t, np.column_stack([0.5 * t**2, 0 * t]), np.zeros((20, 2)))
        kin = ac.arc_kinematics(w)
        assert np.allclose(kin.s_ddot[1:-1], 1.0, atol=0.05**2)
        assert np.allclose(kin.a[:, 0], 1.0, atol=1e-9)

    def test_circle(self):
        radius, omega = 15.0, 0.4
        t = np.arange(40) * 0.05
        xy = radius * np.column_stack([np.cos(omega * t), np.sin(omega * t)])
        kin = ac.arc_kinematics(ac.PoseWindow(t, xy, np.zeros((40, 2))))
        dt2 = 0.05**2
        assert np.allclose(kin.s_dot[1:-1], omega * radius, rtol=dt2)
        assert np.allclose(kin.s_ddot[1:-1], 0.0, atol=10 * dt2)
        assert np.allclose(np.hypot(*kin.a[1:-1].T), omega**2 * radius, rtol=dt2)
        # |r| is constant about the centre, so the resultant reduces to -v.v
        assert np.allclose(kin.m, -(omega * radius) ** 2, rtol=dt2)

    def test_stencils_exact_for_quadratics_on_uneven_grid(self):
        t = np.cumsum([0.0, 0.1, 0.13, 0.08, 0.11, 0.1, 0.12])
        x = 1 + 2 * t - 3 * t**2
        w = ac.PoseWindow(t, np.column_stack([x, 0 * t]), np.zeros((7, 2)))
        assert np.allclose(ac.arc_kinematics(w).a[:, 0], -6.0, atol=1e-8)

    def test_stencils_exact_for_cubics_on_uniform_grid(self):
        t = np.arange(7) * 0.1
        x = 1 + 2 * t - 3 * t**2 + 0.7 * t**3
        w = ac.PoseWindow(t, np.column_stack([x, 0 * t]), np.zeros((7, 2)))
        assert np.allclose(ac.arc_kinematics(w).a[:, 0], -6 + 4.2 * t, atol=1e-8)


class TestBuildLsq:
    @pytest.mark.parametrize("n", [5, 12, 60])
    def test_shape(self, n):
        A, y = ac.build_lsq(cubic_window(K_TRUE, B_TRUE, n=n))
        assert A.shape == (3 * n, 4) and y.shape == (3 * n,)

    def test_truth_satisfies_rows(self):
        A, y = ac.build_lsq(cubic_window(K_TRUE, B_TRUE, origin=(-12.0, 7.0)))
        assert np.max(np.abs(A @ np.r_[K_TRUE, B_TRUE] - y)) < 1e-8

    def test_truth_satisfies_rows_in_body_frame(self):
        base = cubic_window(K_TRUE, B_TRUE)
        yaw = np.linspace(0.1, 0.9, len(base))
        c, s = np.cos(yaw), np.sin(yaw)
        acc_loc = base.accel_meas_xy * K_TRUE - B_TRUE
        body = np.column_stack([c * acc_loc[:, 0] + s * acc_loc[:, 1], -s * acc_loc[:, 0] + c * acc_loc[:, 1]])
        w = ac.PoseWindow(base.timestamps, base.xy, (body + B_TRUE) / K_TRUE, yaw=yaw)
        A, y = ac.build_lsq(w)
        assert np.max(np.abs(A @ np.r_[K_TRUE, B_TRUE] - y)) < 1e-8

    def test_stationary(self):
        acc = np.tile([0.3, -0.2], (8, 1))
        w = ac.PoseWindow(np.arange(8.0), np.tile([5.0, 3.0], (8, 1)), acc)
        A, y = ac.build_lsq(w)
        assert np.allclose(y[8:], 0.0)
        est = ac.solve_bias([w], k_fixed=K_TRUE)
        assert np.allclose(est.beta_bar, K_TRUE * acc[0])


class TestSolve:
    @pytest.mark.parametrize("normalize", [False, True])
    @pytest.mark.parametrize("origin", [(0.0, 0.0), (-30.0, -20.0), (-250.0, -150.0)])
    def test_noise_free_recovery(self, origin, normalize):
        est = ac.solve_calibration(cubic_window(K_TRUE, B_TRUE, origin=origin), normalize)
        assert np.allclose(est.k_bar, K_TRUE, atol=1e-6)
        assert np.allclose(est.beta_bar, B_TRUE, atol=1e-6)
        assert est.status == "full"

    def test_multiple_windows(self):
        w1 = cubic_window(K_TRUE, B_TRUE, n=20)
        w2 = cubic_window(K_TRUE, B_TRUE, n=30, origin=(5.0, -8.0),
                          coeffs=((3.0, -4.0, 0.2, 0.1), (1.0, 6.0, -0.5, 0.0)))
        est = ac.solve_calibration([w1, w2])
        assert est.n_rows == 150
        assert np.allclose(np.r_[est.k_bar, est.beta_bar], np.r_[K_TRUE, B_TRUE], atol=1e-6)

    @pytest.mark.parametrize("speed", [2.0, 8.0, 25.0])
    def test_straight_line_unobservable(self, speed):
        with pytest.raises(UnobservableCalibration) as info:
            ac.solve_calibration(line_window(speed=speed))
        assert "k_ax" in info.value.directions

    def test_monte_carlo_noise(self):
        rng = np.random.default_rng(42)
        w = circle_window(K_TRUE, B_TRUE)
        truth = np.r_[K_TRUE, B_TRUE]
        ok = 0
        for _ in range(100):
            noisy = ac.PoseWindow(w.timestamps, w.xy, w.accel_meas_xy + rng.normal(0, 0.05, (60, 2)), w.origin)
            est = ac.solve_calibration(noisy, normalize=True)
            ok += relative_error(np.r_[est.k_bar, est.beta_bar], truth) <= 0.1
        assert ok >= 95

    def test_corrected(self):
        est = ac.CalibrationEstimate(K_TRUE, B_TRUE, 0.0, 0)
        assert np.allclose(est.corrected([[1.0, 1.0]]), [[0.9, 1.0]])

    def test_bias_only_on_straight_line(self):
        est = ac.solve_bias([line_window(accel=(B_TRUE / K_TRUE))], K_TRUE)
        assert est.status == "bias_only"
        assert np.allclose(est.beta_bar, B_TRUE)

    def test_partial_frees_one_scale(self):
        est = ac.solve_bias([cubic_window(K_TRUE, B_TRUE)], (1.0, K_TRUE[1]), free_k=(True, False))
        assert est.status == "partial"
        assert est.k_bar == pytest.approx(K_TRUE) and est.beta_bar == pytest.approx(B_TRUE)


class TestAccelMeasurement:
    def test_permuted_identity(self):
        model = ac.accel_measurement(NavState(v=[1.0, 2.0, 0.0]), (1.0, 0.0), (0.0, 1.0), 0.3, -0.7)
        assert np.allclose(model.h, [0.3, -0.7])

    @pytest.mark.parametrize("origin", [(-40.0, 25.0), (13.0, -90.0)])
    def test_straight_constant_speed_is_zero(self, origin):
        w = line_window(origin=origin)
        kin = ac.arc_kinematics(w)
        v = np.r_[kin.v[-1], 0.0]
        model = ac.accel_measurement(NavState(v=v), kin.r[-2], kin.r[-1], kin.m[-2], kin.m[-1])
        assert np.allclose(model.h, 0.0, atol=1e-9)

    def test_collinear_poses_skip(self):
        with pytest.raises(SkipAccelUpdate):
            ac.accel_measurement(NavState(), (1.0, 2.0), (2.0, 4.0), 0.0, 0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_partials_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        r_prev, r_curr = rng.normal(0, 50, 2), rng.normal(0, 50, 2)
        if np.linalg.cond(np.vstack([r_prev, r_curr])) > 1e3:
            return
        v = rng.normal(0, 8, 2)
        m_prev, m_curr = rng.normal(0, 5, 2)
        model = ac.accel_measurement(NavState(v=[*v, 0.0]), r_prev, r_curr, m_prev, m_curr)
        fd_p, fd_v = fd_accel_partials(r_prev, r_curr, m_prev, m_curr, v)
        assert relative_error(model.H_p, fd_p) < 1e-4
        assert relative_error(model.H_v, fd_v) < 1e-4
