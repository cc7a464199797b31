"""Single-step ground-reaction-force allocation.

Stand-in for a horizon MPC: a PD law turns the reference error into desired
angular/linear accelerations, which are scaled to a desired body wrench
(world inertia times angular acceleration, mass times linear acceleration
minus gravity). A ridge-regularized least-squares fit of that wrench by the
stance-foot forces is solved with projected gradient descent inside the
linearized friction pyramid ``|fx|, |fy| <= mu fz``, ``f_min <= fz <= f_max``.

Fitting in wrench units rather than acceleration units keeps the normal
matrix conditioned to ~1e2 (acceleration units give ~1e4, which a fixed
500-step first-order solver cannot resolve).
"""
from dataclasses import dataclass, field

import numpy as np

from ._accel import njit, pick
from .dynamics import RobotParams, world_inertia_inv
from .errors import Infeasible
from .state import GRAVITY, OMEGA, POS, THETA, VEL, euler_to_rotation, skew, wrap_angle


@dataclass(frozen=True)
class AllocatorParams:
    mu: float = 0.6
    f_min: float = 0.0
    f_max: float = 500.0
    kp: np.ndarray = field(default_factory=lambda: np.array([50.0, 50.0, 50.0, 20.0, 20.0, 50.0]))
    kd: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 10.0, 8.0, 8.0, 10.0]))
    eps: float = 1e-6
    iterations: int = 500
    tracking_tol: float = 10.0
    # clip on the PD demand (rad/s^2, m/s^2) so large transients stay bounded
    max_ang_acc: float = 30.0
    max_lin_acc: float = 8.0
    # residual weight on the torque rows relative to the force rows (1/m)
    torque_weight: float = 30.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("friction coefficient must be positive")
        if not self.f_max > self.f_min >= 0:
            raise ValueError("need f_max > f_min >= 0")


def desired_acceleration(x, x_ref, ap):
    """PD demand ``[ang_acc(3), lin_acc(3)]`` from the reference error."""
    e_pos = np.concatenate([wrap_angle(x_ref[THETA] - x[THETA]), x_ref[POS] - x[POS]])
    e_vel = np.concatenate([x_ref[OMEGA] - x[OMEGA], x_ref[VEL] - x[VEL]])
    a = ap.kp * e_pos + ap.kd * e_vel
    a[:3] = np.clip(a[:3], -ap.max_ang_acc, ap.max_ang_acc)
    a[3:] = np.clip(a[3:], -ap.max_lin_acc, ap.max_lin_acc)
    return a


def wrench_map(p_b, contact):
    """6x12 map from stacked stance forces to ``[torque; force]``."""
    M = np.zeros((6, 12))
    for i in range(4):
        if contact[i]:
            M[:3, 3 * i:3 * i + 3] = skew(p_b[i])
            M[3:, 3 * i:3 * i + 3] = np.eye(3)
    return M


def desired_wrench(a_des, params, R):
    I_world = R @ params.inertia_body @ R.T
    lin = a_des[3:] - np.array([0.0, 0.0, -GRAVITY])
    return np.concatenate([I_world @ a_des[:3], params.mass * lin])


# -- projection onto one foot's friction pyramid ---------------------------

@njit
def _project_foot_jit(a, b, c, mu, fmin, fmax):
    A = abs(a)
    Bv = abs(b)
    z1 = A / mu
    z2 = Bv / mu
    lo = min(z1, z2)
    hi = max(z1, z2)
    big = Bv if z2 >= z1 else A
    m2 = mu * mu
    # both tangential components saturated
    z = (c + mu * (A + Bv)) / (1.0 + 2.0 * m2)
    if z > lo:
        # one saturated
        z = (c + mu * big) / (1.0 + m2)
        if z < lo:
            z = lo
        elif z > hi:
            z = c if c > hi else hi
    if z < fmin:
        z = fmin
    elif z > fmax:
        z = fmax
    x = min(A, mu * z)
    y = min(Bv, mu * z)
    if a < 0:
        x = -x
    if b < 0:
        y = -y
    return x, y, z


def _project_np(f, stance, mu, fmin, fmax):
    F = f.reshape(-1, 3)
    a, b, c = F[:, 0], F[:, 1], F[:, 2]
    A, Bv = np.abs(a), np.abs(b)
    z1, z2 = A / mu, Bv / mu
    lo, hi = np.minimum(z1, z2), np.maximum(z1, z2)
    big = np.where(z2 >= z1, Bv, A)
    m2 = mu * mu
    z_both = (c + mu * (A + Bv)) / (1.0 + 2.0 * m2)
    z_one = (c + mu * big) / (1.0 + m2)
    z_one = np.where(z_one < lo, lo, np.where(z_one > hi, np.where(c > hi, c, hi), z_one))
    z = np.where(z_both > lo, z_one, z_both)
    z = np.clip(z, fmin, fmax)
    x = np.copysign(np.minimum(A, mu * z), a)
    y = np.copysign(np.minimum(Bv, mu * z), b)
    out = np.stack([x, y, z], axis=1)
    out[~stance] = 0.0
    return out.reshape(-1)


@njit
def _project_jit(f, stance, mu, fmin, fmax):
    out = np.zeros_like(f)
    for i in range(stance.shape[0]):
        if stance[i]:
            x, y, z = _project_foot_jit(f[3 * i], f[3 * i + 1], f[3 * i + 2], mu, fmin, fmax)
            out[3 * i] = x
            out[3 * i + 1] = y
            out[3 * i + 2] = z
    return out


@njit
def _pgd_jit(G, h, f0, stance, mu, fmin, fmax, step, iters):
    n = f0.shape[0]
    f = _project_jit(f0, stance, mu, fmin, fmax)
    obj = np.empty(iters + 1)
    grad = np.empty(n)
    for it in range(iters + 1):
        # objective up to the constant b^T b, gradient of f^T G f - 2 h^T f
        val = 0.0
        for i in range(n):
            gi = 0.0
            for j in range(n):
                gi += G[i, j] * f[j]
            val += f[i] * gi - 2.0 * h[i] * f[i]
            grad[i] = 2.0 * (gi - h[i])
        obj[it] = val
        if it == iters:
            break
        for i in range(n):
            f[i] -= step * grad[i]
        f = _project_jit(f, stance, mu, fmin, fmax)
    return f, obj


def _pgd_np(G, h, f0, stance, mu, fmin, fmax, step, iters):
    f = _project_np(f0, stance, mu, fmin, fmax)
    obj = np.empty(iters + 1)
    for it in range(iters + 1):
        Gf = G @ f
        obj[it] = f @ Gf - 2.0 * h @ f
        if it == iters:
            break
        f = _project_np(f - step * 2.0 * (Gf - h), stance, mu, fmin, fmax)
    return f, obj


_pgd = pick(_pgd_jit, _pgd_np)


def solve_allocation(M, b, stance, ap, f0=None, kernel=None):
    """Minimize ``|W (M f - b)|^2 + eps |f|^2`` over the stance-foot pyramids.

    ``W`` scales the torque rows by ``ap.torque_weight``.

    Returns ``(f, objective_history)``; the history omits the constant
    ``b^T b``.
    """
    stance = np.asarray(stance, dtype=np.bool_)
    w2 = np.ones(M.shape[0])
    w2[:3] = ap.torque_weight ** 2
    G = M.T @ (w2[:, None] * M) + ap.eps * np.eye(M.shape[1])
    h = M.T @ (w2 * b)
    L = 2.0 * np.linalg.eigvalsh(G)[-1]
    if f0 is None:
        f0 = np.zeros(M.shape[1])
    run = kernel or _pgd
    return run(G, h, np.asarray(f0, dtype=np.float64).copy(), stance,
               float(ap.mu), float(ap.f_min), float(ap.f_max), 1.0 / L, int(ap.iterations))


def allocate(x, x_ref, p_b, contact, ap=None, params=None, f0=None):
    """Stance-foot ground reaction forces (world frame, stacked 12-vector)."""
    ap = ap or AllocatorParams()
    params = params or RobotParams()
    contact = np.asarray(contact, dtype=bool)
    n_c = int(contact.sum())
    if n_c == 0:
        return np.zeros(12)
    p_b = np.asarray(p_b, dtype=np.float64).reshape(4, 3)
    R = euler_to_rotation(x[THETA])
    world_inertia_inv(params, R)  # singular-inertia guard
    M = wrench_map(p_b, contact)
    a_des = desired_acceleration(x, x_ref, ap)
    b = desired_wrench(a_des, params, R)
    if f0 is None:
        # gravity-compensating warm start shared evenly by the stance feet
        f0 = np.zeros((4, 3))
        f0[contact, 2] = b[5] / n_c
        f0 = f0.reshape(-1)
    f, _ = solve_allocation(M, b, contact, ap, f0)
    # blame only the constraints: compare against the unconstrained fit
    resid = np.linalg.norm(M @ f - b)
    cols = np.repeat(contact, 3)
    f_free = np.linalg.lstsq(M[:, cols], b, rcond=None)[0]
    resid_free = np.linalg.norm(M[:, cols] @ f_free - b)
    if resid - resid_free > 10.0 * ap.tracking_tol:
        raise Infeasible(f"constraints raise the allocation residual by {resid - resid_free:.3g}, "
                         f"over 10x the tracking tolerance")
    return f
