import numpy as np
import pytest

from binvio.geometry import (
    UnitQuaternion,
    quat_conjugate,
    quat_from_axis_angle,
    quat_multiply,
)
from binvio.imu import (
    ImuSample,
    NavState,
    NoiseParams,
    TimestampGap,
    correct_measurement,
    propagate,
    propagate_block,
    state_transition_jacobian,
)

NO_NOISE = NoiseParams(0.0, 0.0, 0.0, 0.0, 9.81)
NO_NOISE_NO_G = NoiseParams(0.0, 0.0, 0.0, 0.0, 0.0)


def forward_model(omega_true, accel_true, state, noise):
    """Noise-free measurement synthesis (inverse of correct_measurement)."""
    R = state.orientation.to_matrix()
    omega_m = omega_true + state.bias_gyro
    accel_m = accel_true - R @ noise.gravity_vector() + state.bias_accel
    return omega_m, accel_m


def make_stream(t0, t1, rate, omega_fn, accel_fn):
    n = int(round((t1 - t0) * rate))
    ts = t0 + np.arange(n + 1) / rate
    return [ImuSample(t, omega_fn(t), accel_fn(t)) for t in ts]


def error_state_between(perturbed: NavState, nominal: NavState) -> np.ndarray:
    dq = quat_multiply(perturbed.orientation.xyzw, quat_conjugate(nominal.orientation.xyzw))
    if dq[3] < 0:
        dq = -dq
    dx = np.zeros(15)
    dx[0:3] = 2.0 * dq[:3] / dq[3]
    dx[3:6] = perturbed.position - nominal.position
    dx[6:9] = perturbed.velocity - nominal.velocity
    dx[9:12] = perturbed.bias_gyro - nominal.bias_gyro
    dx[12:15] = perturbed.bias_accel - nominal.bias_accel
    return dx


def random_state(rng):
    return NavState(
        UnitQuaternion(rng.normal(size=4)),
        rng.normal(scale=2.0, size=3),
        rng.normal(scale=1.0, size=3),
        rng.normal(scale=0.01, size=3),
        rng.normal(scale=0.05, size=3),
    )


class TestCorrectMeasurement:
    def test_stationary_level_gravity_cancels(self):
        state = NavState()
        sample = ImuSample(0.0, np.zeros(3), np.array([0.0, 0.0, 9.81]))
        w, a = correct_measurement(sample, state, NO_NOISE)
        np.testing.assert_allclose(w, np.zeros(3), atol=1e-15)
        np.testing.assert_allclose(a, np.zeros(3), atol=1e-15)

    def test_gyro_bias_subtraction(self):
        state = NavState(bias_gyro=np.array([0.1, 0.0, 0.0]))
        sample = ImuSample(0.0, np.array([0.1, 0.0, 0.0]), np.array([0.0, 0.0, 9.81]))
        w, _ = correct_measurement(sample, state, NO_NOISE)
        np.testing.assert_allclose(w, np.zeros(3), atol=1e-15)

    def test_round_trip_through_forward_model(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            state = random_state(rng)
            omega_true = rng.normal(scale=5.0, size=3)
            accel_true = rng.normal(scale=3.0, size=3)
            wm, am = forward_model(omega_true, accel_true, state, NO_NOISE)
            w, a = correct_measurement(ImuSample(0.0, wm, am), state, NO_NOISE)
            np.testing.assert_allclose(w, omega_true, atol=1e-12)
            np.testing.assert_allclose(a, accel_true, atol=1e-11)


class TestPropagateMean:
    def test_free_drift(self):
        state = NavState(velocity=np.array([1.0, 0.0, 0.0]))
        samples = make_stream(
            0.0, 1.0, 400, lambda t: np.zeros(3), lambda t: np.array([0.0, 0.0, 9.81])
        )
        out, _ = propagate(state, np.zeros((15, 15)), samples, NO_NOISE)
        np.testing.assert_allclose(out.position, [1.0, 0.0, 0.0], atol=1e-12)
        assert out.orientation.angle_to(state.orientation) < 1e-12

    def test_constant_rotation_matches_closed_form(self):
        w = np.array([0.0, 0.0, 2.0])
        state = NavState()
        samples = make_stream(
            0.0, 1.0, 400, lambda t: w, lambda t: np.array([0.0, 0.0, 9.81])
        )
        # 400 steps of held constant rate
        out, _ = propagate(state, np.zeros((15, 15)), samples, NO_NOISE)
        expected = UnitQuaternion(quat_from_axis_angle(w * 1.0))
        assert out.orientation.angle_to(expected) < 1e-6

    def test_constant_acceleration_double_integral(self):
        a_true = np.array([1.0, 0.0, 0.0])
        state = NavState()
        samples = make_stream(
            0.0, 1.0, 400,
            lambda t: np.zeros(3),
            lambda t: a_true + np.array([0.0, 0.0, 9.81]),
        )
        out, _ = propagate(state, np.zeros((15, 15)), samples, NO_NOISE)
        np.testing.assert_allclose(out.position, [0.5, 0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(out.velocity, [1.0, 0.0, 0.0], atol=1e-9)

    def test_timestamp_gap_raises(self):
        samples = [
            ImuSample(0.0, np.zeros(3), np.zeros(3)),
            ImuSample(0.0025, np.zeros(3), np.zeros(3)),
            ImuSample(0.02, np.zeros(3), np.zeros(3)),
        ]
        with pytest.raises(TimestampGap):
            propagate(NavState(), np.zeros((15, 15)), samples, NO_NOISE_NO_G)

    def test_split_interval_equals_single_call(self):
        rng = np.random.default_rng(2)
        state = random_state(rng)
        samples = make_stream(
            0.0, 0.1, 400,
            lambda t: np.array([np.sin(3 * t), 1.5, -2.0 * np.cos(5 * t)]),
            lambda t: np.array([2.0 * np.sin(t), -1.0, 9.0 + np.cos(4 * t)]),
        )
        cov0 = np.eye(15) * 1e-4
        full_state, full_cov = propagate(state, cov0, samples, NoiseParams())
        j = 17
        mid_state, mid_cov = propagate(state, cov0, samples[: j + 1], NoiseParams())
        end_state, end_cov = propagate(mid_state, mid_cov, samples[j:], NoiseParams())
        assert np.linalg.norm(end_state.position - full_state.position) < 1e-9
        assert end_state.orientation.angle_to(full_state.orientation) < 1e-9
        assert np.abs(end_cov - full_cov).max() < 1e-12

    def test_stationary_ten_seconds_no_drift(self):
        state = NavState()
        samples = make_stream(
            0.0, 10.0, 400, lambda t: np.zeros(3), lambda t: np.array([0.0, 0.0, 9.81])
        )
        out, _ = propagate(state, np.zeros((15, 15)), samples, NO_NOISE)
        assert np.linalg.norm(out.position) < 1e-12
        assert np.linalg.norm(out.velocity) < 1e-12


class TestCovariance:
    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(3)
        state = random_state(rng)
        A = rng.normal(size=(15, 15))
        cov = A @ A.T * 1e-6
        samples = make_stream(
            0.0, 0.25, 400,
            lambda t: rng.normal(scale=2.0, size=3),
            lambda t: rng.normal(scale=2.0, size=3),
        )
        _, out = propagate(state, cov, samples, NoiseParams())
        assert np.abs(out - out.T).max() < 1e-15
        assert np.linalg.eigvalsh(out).min() >= -1e-9

    def test_zero_noise_no_inflation(self):
        rng = np.random.default_rng(4)
        state = random_state(rng)
        samples = make_stream(
            0.0, 0.1, 400, lambda t: np.array([1.0, -2.0, 0.5]),
            lambda t: np.array([0.3, 9.0, 1.0]),
        )
        _, Phi, Q = propagate_block(state, samples, NO_NOISE)
        assert np.abs(Q).max() == 0.0
        # the deterministic reshaping is exactly Phi P Phi^T
        cov0 = np.eye(15) * 1e-4
        _, cov1 = propagate(state, cov0, samples, NO_NOISE)
        np.testing.assert_allclose(cov1, Phi @ cov0 @ Phi.T, atol=1e-18)


class TestStateTransitionJacobian:
    def one_step_map(self, state, sample, dt, noise):
        samples = [sample, ImuSample(sample.t + dt, sample.omega, sample.accel)]
        out, _, _ = propagate_block(state, samples, noise)
        return out

    def fd_jacobian(self, state, sample, dt, noise, eps=1e-6):
        nominal = self.one_step_map(state, sample, dt, noise)
        J = np.zeros((15, 15))
        for i in range(15):
            d = np.zeros(15)
            d[i] = eps
            sp = state.copy()
            sp.apply_error(d)
            sm = state.copy()
            sm.apply_error(-d)
            xp = error_state_between(self.one_step_map(sp, sample, dt, noise), nominal)
            xm = error_state_between(self.one_step_map(sm, sample, dt, noise), nominal)
            J[:, i] = (xp - xm) / (2 * eps)
        return J

    def test_dt_to_zero_limit(self):
        state = NavState()
        sample = ImuSample(0.0, np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.5, 9.0]))
        Phi = state_transition_jacobian(state, sample, 1e-12)
        np.testing.assert_allclose(Phi, np.eye(15), atol=1e-9)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        noise = NoiseParams()
        for _ in range(50):
            state = random_state(rng)
            sample = ImuSample(
                0.0, rng.normal(scale=5.0, size=3), rng.normal(scale=4.0, size=3)
            )
            dt = 0.0025
            Phi = state_transition_jacobian(state, sample, dt)
            fd = self.fd_jacobian(state, sample, dt, noise)
            rel = np.abs(Phi - fd).max() / max(1.0, np.abs(fd).max())
            assert rel < 1e-5

    def test_velocity_row_first_order(self):
        # with gravity disabled the corrected acceleration equals the
        # specific force, making the textbook expression exact
        rng = np.random.default_rng(6)
        state = random_state(rng)
        sample = ImuSample(0.0, rng.normal(size=3), rng.normal(scale=3.0, size=3))
        dt = 0.0025
        Phi = state_transition_jacobian(state, sample, dt)
        _, a_t = correct_measurement(sample, state, NO_NOISE_NO_G)
        R = state.orientation.to_matrix()
        expected = -R.T @ np.array(
            [[0, -a_t[2], a_t[1]], [a_t[2], 0, -a_t[0]], [-a_t[1], a_t[0], 0]]
        ) * dt
        np.testing.assert_allclose(Phi[6:9, 0:3], expected, atol=1e-12)
