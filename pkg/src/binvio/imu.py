"""Inertial state and covariance propagation between camera frames.

The navigation state is (orientation, position, velocity, gyro bias,
accel bias); its 15-dim error state is ordered (dtheta, dp, dv, dbg, dba)
with the attitude error defined by ``q = dq(dtheta) * q_hat``.

Measurements model specific force: with the gravity acceleration vector
``g`` pointing down (0, 0, -9.81), a sample reads

    omega_m = omega_true + b_g + n_g
    a_m     = R(q) (a_global - g) + b_a + n_a

so the body-frame kinematic acceleration is ``a_m + R(q) g - b_a``.
Samples are integrated zeroth-order-hold: sample k's measurement is held
over [t_k, t_{k+1}); the final sample only closes the interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    UnitQuaternion,
    quat_integrate_array,
    quat_to_matrix,
    skew,
    so3_exp,
    so3_right_jacobian,
)

ERROR_STATE_DIM = 15
TH = slice(0, 3)
P = slice(3, 6)
V = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)


class TimestampGap(RuntimeError):
    """Consecutive samples further apart than 3x the nominal period."""


@dataclass(frozen=True)
class ImuSample:
    t: float
    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float))
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.accel))):
            raise ValueError("IMU sample must be finite")


@dataclass
class NavState:
    orientation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("position", "velocity", "bias_gyro", "bias_accel"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            setattr(self, name, v)

    def copy(self) -> "NavState":
        return NavState(
            self.orientation,
            self.position.copy(),
            self.velocity.copy(),
            self.bias_gyro.copy(),
            self.bias_accel.copy(),
        )

    def apply_error(self, dx: np.ndarray) -> None:
        """Left-multiplicative correction on orientation, additive elsewhere."""
        from .geometry import quat_from_axis_angle, quat_multiply, quat_normalize

        dq = quat_from_axis_angle(dx[TH])
        self.orientation = UnitQuaternion(
            quat_normalize(quat_multiply(dq, self.orientation.xyzw))
        )
        self.position = self.position + dx[P]
        self.velocity = self.velocity + dx[V]
        self.bias_gyro = self.bias_gyro + dx[BG]
        self.bias_accel = self.bias_accel + dx[BA]


@dataclass(frozen=True)
class NoiseParams:
    """Continuous-time noise densities plus gravity magnitude.

    gravity may be 0 to disable gravity entirely (used by analytic tests);
    otherwise it must stay near standard gravity.
    """

    gyro_noise: float = 2e-4      # rad/s/sqrt(Hz)
    accel_noise: float = 2e-3     # m/s^2/sqrt(Hz)
    gyro_walk: float = 2e-6       # rad/s^2/sqrt(Hz)
    accel_walk: float = 3e-5      # m/s^3/sqrt(Hz)
    gravity: float = 9.81         # m/s^2

    def __post_init__(self):
        for name in ("gyro_noise", "accel_noise", "gyro_walk", "accel_walk"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.gravity != 0.0 and abs(self.gravity - 9.81) > 0.5:
            raise ValueError("gravity must be 0 or within 9.81 +/- 0.5")

    def gravity_vector(self) -> np.ndarray:
        """Gravity acceleration in G, pointing down."""
        return np.array([0.0, 0.0, -self.gravity])


def correct_measurement(
    sample: ImuSample, state: NavState, noise: NoiseParams
) -> tuple[np.ndarray, np.ndarray]:
    """Bias- and gravity-corrected body rates and kinematic acceleration.

    White noise is not (and cannot be) subtracted; it is accounted for in
    the propagated covariance.
    """
    omega_true = sample.omega - state.bias_gyro
    R = state.orientation.to_matrix()
    accel_true = sample.accel + R @ noise.gravity_vector() - state.bias_accel
    return omega_true, accel_true


def state_transition_jacobian(
    state: NavState, sample: ImuSample, dt: float
) -> np.ndarray:
    """Discrete error-state transition over one held sample."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega_hat = sample.omega - state.bias_gyro
    force_hat = sample.accel - state.bias_accel  # specific force, gravity included
    R = state.orientation.to_matrix()
    A = omega_hat * dt

    Phi = np.eye(ERROR_STATE_DIM)
    Phi[TH, TH] = so3_exp(-A)
    Phi[TH, BG] = -so3_right_jacobian(A) * dt
    Phi[P, V] = np.eye(3) * dt
    Phi[P, TH] = -0.5 * R.T @ skew(force_hat) * dt * dt
    Phi[P, BA] = -0.5 * R.T * dt * dt
    Phi[V, TH] = -R.T @ skew(force_hat) * dt
    Phi[V, BA] = -R.T * dt
    return Phi


def _discrete_noise(state: NavState, noise: NoiseParams, dt: float) -> np.ndarray:
    R = state.orientation.to_matrix()
    G = np.zeros((ERROR_STATE_DIM, 12))
    G[TH, 0:3] = -np.eye(3)
    G[V, 3:6] = -R.T
    G[BG, 6:9] = np.eye(3)
    G[BA, 9:12] = np.eye(3)
    Qc = np.diag(
        np.repeat(
            [noise.gyro_noise**2, noise.accel_noise**2, noise.gyro_walk**2, noise.accel_walk**2],
            3,
        )
    )
    return G @ Qc @ G.T * dt


def _step_mean(
    state: NavState, omega_m, accel_m, noise: NoiseParams, dt: float,
    midpoint_attitude: bool = False,
) -> NavState:
    """Advance the mean over one interval with held measurements.

    With ``midpoint_attitude`` the translational integrals are evaluated at
    the half-step attitude, removing the first-order rotation-hold error
    that otherwise rectifies into a phantom acceleration at high rates.
    """
    omega_hat = omega_m - state.bias_gyro
    if midpoint_attitude:
        q_mid = quat_integrate_array(state.orientation.xyzw, omega_hat, 0.5 * dt)
        R = quat_to_matrix(q_mid)
    else:
        R = state.orientation.to_matrix()
    accel_body = accel_m + R @ noise.gravity_vector() - state.bias_accel
    accel_global = R.T @ accel_body

    out = state.copy()
    out.position = state.position + state.velocity * dt + 0.5 * accel_global * dt * dt
    out.velocity = state.velocity + accel_global * dt
    out.orientation = UnitQuaternion(
        quat_integrate_array(state.orientation.xyzw, omega_hat, dt)
    )
    return out


def propagate_block(
    state: NavState,
    samples: list[ImuSample],
    noise: NoiseParams,
    nominal_rate_hz: float = 400.0,
    integration: str = "zoh",
) -> tuple[NavState, np.ndarray, np.ndarray]:
    """Integrate over the sample stream; also return (Phi_total, Q_total).

    The returned transition and noise cover the 15-dim navigation error and
    are what a joint filter applies to its nav block and cross terms.
    """
    if integration not in ("zoh", "midpoint"):
        raise ValueError("integration must be 'zoh' or 'midpoint'")
    max_gap = 3.0 / nominal_rate_hz
    Phi_total = np.eye(ERROR_STATE_DIM)
    Q_total = np.zeros((ERROR_STATE_DIM, ERROR_STATE_DIM))
    cur = state.copy()
    for k in range(len(samples) - 1):
        s0, s1 = samples[k], samples[k + 1]
        dt = s1.t - s0.t
        if dt <= 0:
            raise ValueError("sample timestamps must be strictly increasing")
        if dt > max_gap:
            raise TimestampGap(f"gap {dt * 1e3:.2f} ms exceeds 3x nominal period")
        if integration == "midpoint":
            omega_m = 0.5 * (s0.omega + s1.omega)
            accel_m = 0.5 * (s0.accel + s1.accel)
        else:
            omega_m, accel_m = s0.omega, s0.accel
        held = ImuSample(s0.t, omega_m, accel_m)
        Phi = state_transition_jacobian(cur, held, dt)
        Qd = _discrete_noise(cur, noise, dt)
        cur = _step_mean(
            cur, omega_m, accel_m, noise, dt,
            midpoint_attitude=(integration == "midpoint"),
        )
        Phi_total = Phi @ Phi_total
        Q_total = Phi @ Q_total @ Phi.T + Qd
    return cur, Phi_total, Q_total


def propagate(
    state: NavState,
    cov: np.ndarray,
    samples: list[ImuSample],
    noise: NoiseParams,
    nominal_rate_hz: float = 400.0,
    integration: str = "zoh",
) -> tuple[NavState, np.ndarray]:
    """Propagate mean and 15x15 covariance across ``samples``.

    The covariance is symmetrized after the step and its eigenvalues are
    floored at -1e-9 (clamped to zero when marginally negative).
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (ERROR_STATE_DIM, ERROR_STATE_DIM):
        raise ValueError("cov must be 15x15")
    new_state, Phi, Q = propagate_block(state, samples, noise, nominal_rate_hz, integration)
    new_cov = Phi @ cov @ Phi.T + Q
    new_cov = 0.5 * (new_cov + new_cov.T)
    evals, evecs = np.linalg.eigh(new_cov)
    if evals.min() < -1e-9:
        new_cov = evecs @ np.diag(np.clip(evals, 0.0, None)) @ evecs.T
        new_cov = 0.5 * (new_cov + new_cov.T)
    return new_state, new_cov
