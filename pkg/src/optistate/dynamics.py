"""Discrete single-rigid-body trunk model driven by ground reaction forces.

``x[k+1] = (I + A dt) x[k] + (B dt) f[k] + g dt`` where ``A`` couples angular
rate into the Euler angles and velocity into position, and ``B`` maps the
stacked world-frame foot forces to angular and linear acceleration.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularInertia
from .state import GRAVITY, OMEGA, POS, STATE_DIM, THETA, VEL, euler_to_rotation, skew

N_FEET = 4
DET_TOL = 1e-12


@dataclass(frozen=True)
class RobotParams:
    mass: float = 12.0
    inertia_body: np.ndarray = field(
        default_factory=lambda: np.diag([0.11, 0.28, 0.32]))
    n_feet: int = N_FEET

    def __post_init__(self):
        I = np.asarray(self.inertia_body, dtype=np.float64)
        object.__setattr__(self, "inertia_body", I)
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if I.shape != (3, 3) or not np.allclose(I, I.T):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(I).min() <= 0:
            raise ValueError("inertia must be positive definite")


def gravity_vector():
    g = np.zeros(STATE_DIM)
    g[-1] = -GRAVITY
    return g


def world_inertia_inv(params, R):
    """Inverse of ``R I_body R^T`` with a determinant guard."""
    I_world = R @ params.inertia_body @ R.T
    det = np.linalg.det(I_world)
    if abs(det) < DET_TOL:
        raise SingularInertia(f"det(I_world) = {det:.3e}")
    return np.linalg.inv(I_world)


def build_A(R):
    A = np.zeros((STATE_DIM, STATE_DIM))
    A[THETA, OMEGA] = R.T
    A[POS, VEL] = np.eye(3)
    return A


def build_B(params, R, p_b):
    p_b = np.asarray(p_b, dtype=np.float64).reshape(params.n_feet, 3)
    Iinv = world_inertia_inv(params, R)
    B = np.zeros((STATE_DIM, 3 * params.n_feet))
    for i in range(params.n_feet):
        cols = slice(3 * i, 3 * i + 3)
        B[OMEGA, cols] = Iinv @ skew(p_b[i])
        B[VEL, cols] = np.eye(3) / params.mass
    return B


def mask_swing_forces(f, contact):
    """Zero the force triplets of feet whose contact flag is 0."""
    f = np.asarray(f, dtype=np.float64).reshape(-1, 3).copy()
    f[~np.asarray(contact, dtype=bool)] = 0.0
    return f.reshape(-1)


def dyn_step(x, f, p_b, params, dt, R=None):
    """One step of the trunk model in matrix form.

    ``R`` defaults to the rotation of ``x``'s own Euler angles; pass it
    explicitly to linearize about a different attitude (the filter uses its
    current estimate).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if R is None:
        R = euler_to_rotation(x[THETA])
    A = build_A(R)
    B = build_B(params, R, p_b)
    return (np.eye(STATE_DIM) + A * dt) @ x + (B * dt) @ f + gravity_vector() * dt


def dyn_step_blocks(x, f, p_b, params, dt, R=None):
    """Same step as :func:`dyn_step`, evaluated row block by row block."""
    if R is None:
        R = euler_to_rotation(x[THETA])
    p_b = np.asarray(p_b, dtype=np.float64).reshape(params.n_feet, 3)
    f = np.asarray(f, dtype=np.float64).reshape(params.n_feet, 3)
    Iinv = world_inertia_inv(params, R)
    theta, r, omega, v = x[THETA], x[POS], x[OMEGA], x[VEL]
    torque_acc = sum(Iinv @ np.cross(p_b[i], f[i]) for i in range(params.n_feet))
    lin_acc = f.sum(axis=0) / params.mass + np.array([0.0, 0.0, -GRAVITY])
    return np.concatenate([
        theta + dt * (R.T @ omega),
        r + dt * v,
        omega + dt * torque_acc,
        v + dt * lin_acc,
    ])


def transition_matrix(R, dt):
    """``expm(A dt)``, which is exactly ``I + A dt`` because ``A @ A == 0``."""
    return np.eye(STATE_DIM) + build_A(R) * dt
