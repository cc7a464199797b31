"""Trunk state layout, Euler conventions and small rotation helpers.

The trunk state is a flat 12-vector ``[theta(3), r(3), omega(3), v(3)]`` in
the world frame. Euler angles follow the Z-Y-X (yaw-pitch-roll) convention,
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, mapping body vectors to world.
"""
import numpy as np

from .errors import GimbalLock

GRAVITY = 9.81
STATE_DIM = 12

THETA = slice(0, 3)
POS = slice(3, 6)
OMEGA = slice(6, 9)
VEL = slice(9, 12)

STATE_NAMES = (
    "theta_x", "theta_y", "theta_z",
    "r_x", "r_y", "r_z",
    "omega_x", "omega_y", "omega_z",
    "v_x", "v_y", "v_z",
)

EULER_ORDER = "ZYX"
GIMBAL_TOL = 1e-6


def make_state(theta=(0, 0, 0), r=(0, 0, 0), omega=(0, 0, 0), v=(0, 0, 0)):
    x = np.concatenate([theta, r, omega, v]).astype(np.float64)
    check_state(x)
    return x


def check_state(x):
    x = np.asarray(x)
    if x.shape != (STATE_DIM,):
        raise ValueError(f"trunk state must have shape (12,), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("trunk state has non-finite entries")
    return x


def skew(v):
    """Cross-product matrix: ``skew(v) @ q == cross(v, q)``."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(theta):
    """Body-to-world rotation for roll/pitch/yaw angles ``theta``."""
    roll, pitch, yaw = theta
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rotation_to_euler(R):
    """Inverse of :func:`euler_to_rotation`.

    Raises GimbalLock when the pitch lies within 1e-6 rad of +-pi/2, where
    roll and yaw are no longer separable.
    """
    R = np.asarray(R, dtype=np.float64)
    pitch = np.arctan2(-R[2, 0], np.hypot(R[0, 0], R[1, 0]))
    if np.pi / 2 - abs(pitch) < GIMBAL_TOL:
        raise GimbalLock(f"pitch {pitch!r} is within {GIMBAL_TOL} of +-pi/2")
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)
