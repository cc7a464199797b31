"""Linear Kalman filter on the single-rigid-body trunk model.

Prediction runs the trunk model with the previous step's forces and foot
positions; the update fuses IMU angles and rates with leg-odometry height
and velocity (10 rows, every state except horizontal position).
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import RobotParams, dyn_step, transition_matrix
from .errors import InnovationSingular, NoContact
from .kinematics import LegGeometry, all_feet, foot_velocity, trunk_height_odom, trunk_velocity_odom
from .state import STATE_DIM, THETA, euler_to_rotation, wrap_angle

MEAS_DIM = 10
# state index observed by each measurement row
H_ROWS = np.array([0, 1, 2, 5, 6, 7, 8, 9, 10, 11])
ODOM_ROWS = np.array([3, 7, 8, 9])
COND_LIMIT = 1e12

_Q_DENSITY = np.repeat([1e-4, 1e-4, 1e-3, 1e-2], 3)
_R_DIAG = np.array([1e-4] * 3 + [1e-4] + [1e-3] * 3 + [1e-2] * 3)


def selector(mask=None):
    H = np.zeros((MEAS_DIM, STATE_DIM))
    H[np.arange(MEAS_DIM), H_ROWS] = 1.0
    if mask is not None:
        H = H[np.asarray(mask, dtype=bool)]
    return H


@dataclass
class NoiseConfig:
    """Process (per step) and measurement covariances.

    The default process noise treats the per-block values as densities per
    second and scales them by the step length.
    """
    Q: np.ndarray
    R: np.ndarray

    @classmethod
    def default(cls, dt=0.005):
        return cls(Q=np.diag(_Q_DENSITY * dt), R=np.diag(_R_DIAG))

    def __post_init__(self):
        for name in ("Q", "R"):
            M = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() < -1e-12:
                raise ValueError(f"{name} must be symmetric PSD")
            setattr(self, name, M)


@dataclass
class KalmanBelief:
    x: np.ndarray
    P: np.ndarray
    feet_prev: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, x0, p0=1e-2):
        return cls(x=np.array(x0, dtype=np.float64), P=p0 * np.eye(STATE_DIM))

    def check(self, tol=1e-9):
        if not np.allclose(self.P, self.P.T, atol=tol):
            raise ValueError("covariance not symmetric")
        if np.linalg.eigvalsh(self.P).min() < -tol:
            raise ValueError("covariance not PSD")


@dataclass
class Measurement:
    z: np.ndarray
    mask: np.ndarray = field(default_factory=lambda: np.ones(MEAS_DIM, dtype=bool))


def predict(belief, f, p_b, params, dt, Q):
    R = euler_to_rotation(belief.x[THETA])
    x = dyn_step(belief.x, f, p_b, params, dt, R=R)
    F = transition_matrix(R, dt)
    P = F @ belief.P @ F.T + Q
    return replace(belief, x=x, P=0.5 * (P + P.T))


def assemble_measurement(imu_theta, imu_omega, r_z_odom, v_odom, n_c):
    z = np.concatenate([imu_theta, [r_z_odom], imu_omega, v_odom]).astype(np.float64)
    mask = np.ones(MEAS_DIM, dtype=bool)
    if n_c == 0:
        mask[ODOM_ROWS] = False
        z[ODOM_ROWS] = 0.0
    return Measurement(z=z, mask=mask)


def update(belief, meas, R_meas):
    mask = np.asarray(meas.mask, dtype=bool)
    if not mask.any():
        return belief
    H = selector(mask)
    Rm = R_meas[np.ix_(mask, mask)]
    y = meas.z[mask] - H @ belief.x
    # the first three rows (when present) are Euler angles
    n_ang = int(mask[:3].sum())
    y[:n_ang] = wrap_angle(y[:n_ang])
    S = H @ belief.P @ H.T + Rm
    if np.linalg.cond(S) > COND_LIMIT:
        raise InnovationSingular(f"cond(S) = {np.linalg.cond(S):.3e}")
    K = np.linalg.solve(S, H @ belief.P).T
    x = belief.x + K @ y
    IKH = np.eye(STATE_DIM) - K @ H
    P = IKH @ belief.P @ IKH.T + K @ Rm @ K.T
    return replace(belief, x=x, P=0.5 * (P + P.T))


@dataclass
class Odometry:
    """Leg-odometry by-products of one frame (reused as network features)."""
    p: np.ndarray
    pdot: np.ndarray
    r_z: float
    v: np.ndarray


def leg_odometry(frame, geom, raw_body_z=False):
    p = all_feet(frame.Theta, geom)
    pdot = foot_velocity(frame.Theta, frame.ThetaDot, geom).reshape(4, 3)
    R = euler_to_rotation(frame.imu.theta)
    try:
        r_z = trunk_height_odom(p, R, frame.contact, raw_body_z=raw_body_z)
        v = trunk_velocity_odom(p, pdot, frame.imu.omega, R, frame.contact)
    except NoContact:
        r_z, v = 0.0, np.zeros(3)
    return Odometry(p=p, pdot=pdot, r_z=r_z, v=v)


@dataclass
class KalmanFilter:
    params: RobotParams = field(default_factory=RobotParams)
    geom: LegGeometry = field(default_factory=LegGeometry)
    noise: Optional[NoiseConfig] = None
    dt: float = 0.005
    raw_body_z: bool = False

    def __post_init__(self):
        if self.noise is None:
            self.noise = NoiseConfig.default(self.dt)

    def step(self, belief, frame, odom=None):
        """Filter one sensor frame; returns the new belief.

        Forces stored with frame k act over the interval ending at k, so the
        prediction pairs them with the foot positions of the previous frame.
        """
        if odom is None:
            odom = leg_odometry(frame, self.geom, self.raw_body_z)
        n_c = int(np.count_nonzero(frame.contact))
        meas = assemble_measurement(frame.imu.theta, frame.imu.omega, odom.r_z, odom.v, n_c)
        feet = belief.feet_prev if belief.feet_prev is not None else odom.p
        prior = predict(belief, frame.forces, feet, self.params, self.dt, self.noise.Q)
        post = update(prior, meas, self.noise.R)
        return replace(post, feet_prev=odom.p)

    def run(self, dataset, x0=None, p0=1e-2, return_cov=False):
        """Filter a whole dataset; returns estimates (and covariances)."""
        if x0 is None:
            x0 = dataset.truth[0] if dataset.truth is not None else np.concatenate(
                [dataset.imu_theta[0], np.zeros(9)])
        belief = KalmanBelief.initial(x0, p0)
        n = len(dataset)
        xs = np.empty((n, STATE_DIM))
        Ps = np.empty((n, STATE_DIM, STATE_DIM)) if return_cov else None
        xs[0] = belief.x
        if return_cov:
            Ps[0] = belief.P
        belief.feet_prev = all_feet(dataset.Theta[0], self.geom)
        for k in range(1, n):
            belief = self.step(belief, dataset.frame(k))
            xs[k] = belief.x
            if return_cov:
                Ps[k] = belief.P
        return (xs, Ps) if return_cov else xs
