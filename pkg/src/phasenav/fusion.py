"""Error-state Kalman filter fusing IMU, visual odometry, and radio fixes.

Nominal state: position, velocity, and a body-to-world quaternion
(10 numbers). The error state is the 9-vector [dp, dv, dtheta]. IMU
samples drive the prediction; position measurements (visual odometry or
carrier-phase fixes) correct it through a linear position observation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .evaluation import TrajectoryRecord
from .util import csv_rows

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


@dataclass(eq=False)
class NavState:
    """Nominal state: position, velocity, attitude quaternion."""

    p: np.ndarray
    v: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.p.shape != (3,) or self.v.shape != (3,) or self.q.shape != (4,):
            raise ValueError("state must be p(3), v(3), q(4)")
        n = np.linalg.norm(self.q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("attitude quaternion must be unit length")

    def copy(self) -> "NavState":
        return NavState(self.p.copy(), self.v.copy(), self.q.copy())


@dataclass(eq=False)
class ErrorBelief:
    """Covariance of the 9-d error state."""

    P: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if self.P.shape != (9, 9):
            raise ValueError("error covariance must be 9x9")

    def validate(self) -> None:
        scale = max(np.linalg.norm(self.P), 1e-30)
        if np.linalg.norm(self.P - self.P.T) > 1e-9 * scale:
            raise ValueError("covariance lost symmetry")
        eigs = np.linalg.eigvalsh(0.5 * (self.P + self.P.T))
        if eigs.min() < -1e-9 * max(np.trace(self.P), 1e-30):
            raise ValueError("covariance lost positive semidefiniteness")


@dataclass(frozen=True)
class ImuSample:
    t: float
    f: np.ndarray  # specific force, body frame, m/s^2
    w: np.ndarray  # angular rate, body frame, rad/s

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))


@dataclass(frozen=True)
class PositionMeasurement:
    t: float
    y: np.ndarray   # measured position, m
    R: np.ndarray   # 3x3 measurement covariance
    source: str     # "CPP" or "VO"

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        if self.R.shape != (3, 3):
            raise ValueError("measurement covariance must be 3x3")


@dataclass(frozen=True)
class FilterConfig:
    sigma_acc: float = 0.05   # accelerometer noise density proxy, m/s^2
    sigma_gyr: float = 0.002  # gyro noise proxy, rad/s
    gravity: np.ndarray = field(default_factory=lambda: DEFAULT_GRAVITY.copy())

    def __post_init__(self):
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))
        if self.sigma_acc < 0.0 or self.sigma_gyr < 0.0:
            raise ValueError("noise sigmas must be non-negative")


H_JACOBIAN = np.hstack([np.eye(3), np.zeros((3, 6))])


def predict(
    state: NavState,
    belief: ErrorBelief,
    imu: ImuSample,
    dt: float,
    config: FilterConfig,
) -> tuple[NavState, ErrorBelief]:
    """Propagate nominal state and error covariance by one IMU interval.

    Nominal update (two-term position integration, specific force
    rotated into the world frame, quaternion composed with the rate
    increment):

        a   = R(q) f + g
        p'  = p + dt v + dt^2/2 a
        v'  = v + dt a
        q'  = q (x) exp(w dt)

    Covariance: P' = F P F^T + L (dt^2 diag(s_a^2 I, s_g^2 I)) L^T with
    the position/velocity/attitude Jacobian F and the noise insertion
    L = [[0,0],[I,0],[0,I]].
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    rot = quat.to_rotation_matrix(state.q)
    accel = rot @ imu.f + config.gravity

    p_new = state.p + dt * state.v + 0.5 * dt * dt * accel
    v_new = state.v + dt * accel
    q_new = quat.normalize(quat.multiply(state.q, quat.from_rotvec(imu.w * dt)))

    F = np.eye(9)
    F[0:3, 3:6] = dt * np.eye(3)
    # Attitude error lives in the body frame (injection right-multiplies
    # the nominal quaternion), so the velocity coupling is -R [f]x, not
    # -[R f]x; the two differ once the body frame has rotated.
    F[3:6, 6:9] = -(rot @ skew(imu.f)) * dt

    L = np.zeros((9, 6))
    L[3:6, 0:3] = np.eye(3)
    L[6:9, 3:6] = np.eye(3)

    Q = dt * dt * np.diag(
        [config.sigma_acc**2] * 3 + [config.sigma_gyr**2] * 3
    )
    P = F @ belief.P @ F.T + L @ Q @ L.T
    P = 0.5 * (P + P.T)
    return NavState(p_new, v_new, q_new), ErrorBelief(P)


def update(
    state: NavState,
    belief: ErrorBelief,
    meas: PositionMeasurement,
) -> tuple[NavState, ErrorBelief]:
    """Correct the nominal state with one position measurement.

    Computes the Kalman gain against the position observation, injects
    the error estimate (attitude via quaternion composition of the
    small-angle increment), and updates the covariance in Joseph form,
    which keeps it symmetric positive semidefinite under roundoff.

    Raises:
        ValueError: singular innovation covariance.
    """
    H = H_JACOBIAN
    P = belief.P
    S = P[0:3, 0:3] + meas.R
    if np.linalg.cond(S) > 1e12:
        raise ValueError("singular innovation covariance")
    K = P @ H.T @ np.linalg.inv(S)
    innovation = meas.y - state.p
    dx = K @ innovation

    p_new = state.p + dx[0:3]
    v_new = state.v + dx[3:6]
    q_new = quat.normalize(quat.multiply(state.q, quat.from_rotvec(dx[6:9])))

    IKH = np.eye(9) - K @ H
    P_new = IKH @ P @ IKH.T + K @ meas.R @ K.T
    P_new = 0.5 * (P_new + P_new.T)
    return NavState(p_new, v_new, q_new), ErrorBelief(P_new)


def run_filter(
    imu_stream,
    meas_stream,
    init_state: NavState,
    init_belief: ErrorBelief,
    config: FilterConfig,
    validate_each_step: bool = False,
) -> TrajectoryRecord:
    """Run the filter over time-ordered IMU and measurement streams.

    The state is anchored at the first IMU timestamp. Each subsequent
    IMU sample closes one prediction interval (using the sample at the
    interval start); measurements with timestamps inside the closed
    interval are applied afterwards, oldest first, so a measurement
    exactly on an IMU timestamp sees predict-then-update ordering.
    Measurements at or before the first IMU timestamp update the
    initial state. With no measurements at all the output is pure
    dead-reckoning.

    Returns:
        TrajectoryRecord sampled at the IMU timestamps.
    """
    imu = list(imu_stream)
    if len(imu) < 2:
        raise ValueError("need at least two IMU samples")
    if any(b.t <= a.t for a, b in zip(imu, imu[1:])):
        raise ValueError("IMU timestamps must be strictly increasing")
    meas = sorted(meas_stream, key=lambda m: m.t)

    state = init_state.copy()
    belief = ErrorBelief(init_belief.P.copy())
    mi = 0
    while mi < len(meas) and meas[mi].t <= imu[0].t:
        state, belief = update(state, belief, meas[mi])
        mi += 1

    times = [imu[0].t]
    positions = [state.p.copy()]
    quaternions = [state.q.copy()]
    for prev, cur in zip(imu, imu[1:]):
        dt = cur.t - prev.t
        state, belief = predict(state, belief, prev, dt, config)
        while mi < len(meas) and meas[mi].t <= cur.t:
            state, belief = update(state, belief, meas[mi])
            mi += 1
        if validate_each_step:
            belief.validate()
        times.append(cur.t)
        positions.append(state.p.copy())
        quaternions.append(state.q.copy())
    return TrajectoryRecord(
        times=np.array(times),
        positions=np.array(positions),
        quaternions=np.array(quaternions),
    )


def run_filter_with_beliefs(
    imu_stream,
    meas_stream,
    init_state: NavState,
    init_belief: ErrorBelief,
    config: FilterConfig,
):
    """Like :func:`run_filter` but also returns the per-sample covariances.

    Used by consistency studies that need the filter's own uncertainty.
    """
    imu = list(imu_stream)
    if len(imu) < 2:
        raise ValueError("need at least two IMU samples")
    meas = sorted(meas_stream, key=lambda m: m.t)
    state = init_state.copy()
    belief = ErrorBelief(init_belief.P.copy())
    mi = 0
    while mi < len(meas) and meas[mi].t <= imu[0].t:
        state, belief = update(state, belief, meas[mi])
        mi += 1
    out_states = [state.copy()]
    out_covs = [belief.P.copy()]
    times = [imu[0].t]
    for prev, cur in zip(imu, imu[1:]):
        state, belief = predict(state, belief, prev, cur.t - prev.t, config)
        while mi < len(meas) and meas[mi].t <= cur.t:
            state, belief = update(state, belief, meas[mi])
            mi += 1
        out_states.append(state.copy())
        out_covs.append(belief.P.copy())
        times.append(cur.t)
    return np.array(times), out_states, out_covs


def synth_vo_stream(
    truth: TrajectoryRecord,
    drift_per_meter: float,
    noise_std: float,
    rng: np.random.Generator,
    source: str = "VO",
) -> list[PositionMeasurement]:
    """Visual-odometry-like measurements from a truth trajectory.

    The drift is a bias that grows linearly with traveled path length
    along a random (but fixed per stream) direction, so the terminal
    offset magnitude is drift_per_meter times the path length; white
    noise of the given std is added on top and reported in R.
    """
    if drift_per_meter < 0.0 or noise_std < 0.0:
        raise ValueError("drift and noise must be non-negative")
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    steps = np.linalg.norm(np.diff(truth.positions, axis=0), axis=1)
    path = np.r_[0.0, np.cumsum(steps)]
    R = np.eye(3) * max(noise_std, 1e-6) ** 2
    out = []
    for t, p, s in zip(truth.times, truth.positions, path):
        y = p + drift_per_meter * s * direction + rng.normal(0.0, noise_std, 3)
        out.append(PositionMeasurement(t=float(t), y=y, R=R.copy(), source=source))
    return out


# --- CSV formats ------------------------------------------------------------


def write_imu_csv(path, samples) -> None:
    """Rows ``t,fx,fy,fz,wx,wy,wz``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "fx", "fy", "fz", "wx", "wy", "wz"])
        for s in samples:
            writer.writerow([repr(float(s.t))] + [repr(float(v)) for v in (*s.f, *s.w)])


def read_imu_csv(path) -> list[ImuSample]:
    out = []
    for row in csv_rows(path):
        if row[0] == "t":
            continue
        vals = [float(v) for v in row]
        out.append(ImuSample(t=vals[0], f=np.array(vals[1:4]), w=np.array(vals[4:7])))
    if not out:
        raise ValueError("empty IMU stream")
    return out


def write_measurement_csv(path, measurements) -> None:
    """Rows ``t,x,y,z,r11,r22,r33,source`` (diagonal covariance)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "r11", "r22", "r33", "source"])
        for m in measurements:
            writer.writerow(
                [repr(float(m.t))]
                + [repr(float(v)) for v in m.y]
                + [repr(float(m.R[i, i])) for i in range(3)]
                + [m.source]
            )


def read_measurement_csv(path) -> list[PositionMeasurement]:
    out = []
    for row in csv_rows(path):
        if row[0] == "t":
            continue
        out.append(
            PositionMeasurement(
                t=float(row[0]),
                y=np.array([float(v) for v in row[1:4]]),
                R=np.diag([float(v) for v in row[4:7]]),
                source=row[7],
            )
        )
    return out
