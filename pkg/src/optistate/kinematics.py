"""Point-foot 3-DoF leg kinematics and leg odometry.

Each leg is a serial chain: hip abduction about body x, hip pitch about y,
knee pitch about y. Legs are ordered FL, FR, RL, RR; left legs put the
abduction link on +y.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import NoContact
from .state import skew

LEG_NAMES = ("FL", "FR", "RL", "RR")
_SIDE = np.array([1.0, -1.0, 1.0, -1.0])


def _hip_offsets(dx, dy):
    return np.array([[dx, dy, 0.0], [dx, -dy, 0.0], [-dx, dy, 0.0], [-dx, -dy, 0.0]])


@dataclass(frozen=True)
class LegGeometry:
    hip_offsets: np.ndarray = field(default_factory=lambda: _hip_offsets(0.19, 0.05))
    l1: float = 0.06
    l2: float = 0.21
    l3: float = 0.21
    joint_limit: float = 2.8
    workspace: float = 0.6

    def __post_init__(self):
        hips = np.asarray(self.hip_offsets, dtype=np.float64).reshape(4, 3)
        object.__setattr__(self, "hip_offsets", hips)
        if min(self.l1, self.l2, self.l3) <= 0:
            raise ValueError("link lengths must be positive")

    def side(self, leg):
        return _SIDE[leg]


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _chain(q, geom, leg):
    """Intermediate vectors of the chain (shared by FK and Jacobian)."""
    shank = np.array([0.0, 0.0, -geom.l3])
    Rk = _ry(q[2])
    w = np.array([0.0, 0.0, -geom.l2]) + Rk @ shank
    Rh = _ry(q[1])
    u = np.array([0.0, geom.side(leg) * geom.l1, 0.0]) + Rh @ w
    Ra = _rx(q[0])
    return Ra, Rh, Rk, u, w, shank


def forward_kinematics(theta_leg, geom, leg):
    """Foot position of ``leg`` relative to the trunk CoM, body frame."""
    if leg not in range(4):
        raise ValueError(f"leg index must be in 0..3, got {leg}")
    Ra, _, _, u, _, _ = _chain(np.asarray(theta_leg, dtype=np.float64), geom, leg)
    return geom.hip_offsets[leg] + Ra @ u


def jacobian(theta_leg, geom, leg):
    """Analytic ``d foot / d joints`` (3x3) for one leg."""
    if leg not in range(4):
        raise ValueError(f"leg index must be in 0..3, got {leg}")
    Ra, Rh, Rk, u, w, shank = _chain(np.asarray(theta_leg, dtype=np.float64), geom, leg)
    J = np.empty((3, 3))
    # unit-axis cross products written out: e_x x a = (0, -a_z, a_y), e_y x a = (a_z, 0, -a_x)
    J[:, 0] = Ra @ np.array([0.0, -u[2], u[1]])
    RaRh = Ra @ Rh
    J[:, 1] = RaRh @ np.array([w[2], 0.0, -w[0]])
    J[:, 2] = RaRh @ Rk @ np.array([shank[2], 0.0, -shank[0]])
    return J


def inverse_kinematics(p_leg, geom, leg):
    """Joint angles placing the foot of ``leg`` at body-frame ``p_leg``.

    Knee-backward branch (knee angle negative). Raises ValueError when the
    target is out of reach.
    """
    d = np.asarray(p_leg, dtype=np.float64) - geom.hip_offsets[leg]
    uy = geom.side(leg) * geom.l1
    r2 = d[1] ** 2 + d[2] ** 2 - uy ** 2
    if r2 <= 0:
        raise ValueError("foot target inside the abduction radius")
    uz = -np.sqrt(r2)
    q1 = np.arctan2(d[2], d[1]) - np.arctan2(uz, uy)
    ux = d[0]
    c3 = (ux ** 2 + uz ** 2 - geom.l2 ** 2 - geom.l3 ** 2) / (2 * geom.l2 * geom.l3)
    if not -1.0 <= c3 <= 1.0:
        raise ValueError("foot target out of reach")
    q3 = -np.arccos(c3)
    wx = -geom.l3 * np.sin(q3)
    wz = -geom.l2 - geom.l3 * np.cos(q3)
    q2 = np.arctan2(ux, uz) - np.arctan2(wx, wz)
    q = np.array([q1, q2, q3])
    return (q + np.pi) % (2 * np.pi) - np.pi


def all_feet(Theta, geom):
    """Body-frame positions of the four feet, shape (4, 3)."""
    Theta = np.asarray(Theta, dtype=np.float64).reshape(4, 3)
    return np.stack([forward_kinematics(Theta[i], geom, i) for i in range(4)])


def foot_velocity(Theta, ThetaDot, geom):
    """Per-leg ``J(theta) @ theta_dot``, flattened to 12 values (body frame)."""
    Theta = np.asarray(Theta, dtype=np.float64).reshape(4, 3)
    ThetaDot = np.asarray(ThetaDot, dtype=np.float64).reshape(4, 3)
    return np.concatenate([jacobian(Theta[i], geom, i) @ ThetaDot[i] for i in range(4)])


def trunk_velocity_odom(p, pdot, omega_imu, R, contact):
    """World-frame trunk velocity from stance-foot kinematics.

    ``omega_imu`` is the world-frame angular rate; it is rotated into the
    body frame, where ``p`` and ``pdot`` live.
    """
    contact = np.asarray(contact, dtype=bool)
    n_c = int(contact.sum())
    if n_c == 0:
        raise NoContact("no stance foot for velocity odometry")
    p = np.asarray(p, dtype=np.float64).reshape(4, 3)
    pdot = np.asarray(pdot, dtype=np.float64).reshape(4, 3)
    omega_b = R.T @ np.asarray(omega_imu, dtype=np.float64)
    W = skew(omega_b)
    total = np.zeros(3)
    for i in np.flatnonzero(contact):
        total += R @ (pdot[i] + W @ p[i])
    return -total / n_c


def trunk_height_odom(p, R, contact, raw_body_z=False):
    """Trunk height above the mean stance-foot height.

    By default the feet are rotated into the world frame first; with
    ``raw_body_z`` the body-frame z components are averaged directly.
    """
    contact = np.asarray(contact, dtype=bool)
    n_c = int(contact.sum())
    if n_c == 0:
        raise NoContact("no stance foot for height odometry")
    p = np.asarray(p, dtype=np.float64).reshape(4, 3)[contact]
    z = p[:, 2] if raw_body_z else (p @ R.T)[:, 2]
    return -z.sum() / n_c
