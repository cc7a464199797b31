"""Closed-loop trot simulation producing ground truth and sensor streams.

Ground truth advances with the same single-rigid-body step the filter uses,
driven by allocator forces. Everything the estimator must cope with enters
through the feet and the sensors: stance-foot slip on slippery ground,
stance-foot sinking on compliant rough ground, terrain height under the
feet, and Gaussian sensor noise.
"""
import dataclasses

import numpy as np

from ..allocator import AllocatorParams, allocate
from ..config import CommandConfig, NoiseParams, SimConfig, format_kv, to_kv
from ..dynamics import RobotParams, dyn_step
from ..errors import ConfigError
from ..frames import Dataset
from ..kinematics import LegGeometry, inverse_kinematics, jacobian
from ..state import GRAVITY, OMEGA, POS, THETA, VEL, euler_to_rotation, rot_z
from .gait import contact_at, period_frames
from .render import Camera, render_depth

# The trunk model crosses body-frame levers with world-frame forces, which
# matches rigid-body physics only near zero yaw; commands stay in that band.
YAW_LIMIT = 0.6
RAIBERT_GAIN = 0.17  # about sqrt(h / g) for the nominal height
_GRAVITY_W = np.array([0.0, 0.0, -GRAVITY])


def camera_from_config(cc):
    return Camera(height=cc.height, width=cc.width, fov_deg=cc.fov_deg,
                  pitch_deg=cc.pitch_deg, max_range=cc.max_range)


def depth_tick(k, dt, rate):
    """Camera frame counter at base frame ``k`` (sample-and-hold index)."""
    tick = np.floor(np.asarray(k) * dt * rate + 1e-9).astype(np.int64)
    return int(tick) if tick.ndim == 0 else tick


class _Commander:
    """Velocity commands and the reference trunk state built from them."""

    def __init__(self, cc: CommandConfig, rng, x0, terrain, h_nom, dt):
        self.cc = cc
        self.rng = rng
        self.terrain = terrain
        self.h_nom = h_nom
        self.dt = dt
        self.v_fwd = 0.0
        self.v_lat = 0.0
        self.yaw_rate = 0.0
        self.yaw = float(x0[2])
        self.r_xy = x0[3:5].copy()
        # per-trajectory straight-line speed so seeds differ on straight runs
        self.speed = cc.speed * (1.0 + cc.speed_spread * rng.uniform(-1.0, 1.0))

    def advance(self, t, x):
        cc, dt = self.cc, self.dt
        if cc.mode == "stand" or t < cc.settle_time:
            self.v_fwd = self.v_lat = self.yaw_rate = 0.0
        elif cc.mode == "straight":
            self.v_fwd, self.v_lat, self.yaw_rate = self.speed, 0.0, 0.0
        else:
            a = dt / cc.tau
            s = np.sqrt(2.0 * a)
            n = self.rng.standard_normal(3)
            self.v_fwd += -a * (self.v_fwd - cc.mean_forward) + s * cc.std_forward * n[0]
            self.v_lat += -a * self.v_lat + s * cc.std_lateral * n[1]
            self.yaw_rate += -a * self.yaw_rate + s * cc.std_yaw_rate * n[2]
            self.v_fwd = float(np.clip(self.v_fwd, -0.3, 0.4))
            self.v_lat = float(np.clip(self.v_lat, -0.2, 0.2))
            self.yaw_rate = float(np.clip(self.yaw_rate, -0.6, 0.6))
            if abs(self.yaw) > YAW_LIMIT and self.yaw * self.yaw_rate > 0:
                self.yaw_rate = -self.yaw_rate
        self.yaw += self.yaw_rate * dt
        v_xy = rot_z(self.yaw)[:2, :2] @ np.array([self.v_fwd, self.v_lat])
        self.r_xy = self.r_xy + v_xy * dt
        # keep the horizontal reference tethered to the body
        self.r_xy = x[3:5] + np.clip(self.r_xy - x[3:5], -0.05, 0.05)
        return v_xy

    def reference(self, x, v_xy):
        ground = self.terrain.height(x[3], x[4])
        ahead = self.terrain.height(x[3] + v_xy[0] * self.dt, x[4] + v_xy[1] * self.dt)
        ref = np.zeros(12)
        ref[THETA] = [0.0, 0.0, self.yaw]
        ref[POS] = [self.r_xy[0], self.r_xy[1], self.h_nom + ground]
        ref[OMEGA] = [0.0, 0.0, self.yaw_rate]
        ref[VEL] = [v_xy[0], v_xy[1], (ahead - ground) / self.dt]
        return ref


def _smooth(s):
    return s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s)


def _bump(s, h):
    return 16.0 * h * s * s * (1.0 - s) ** 2, 32.0 * h * s * (1.0 - s) * (1.0 - 2.0 * s)


def simulate(config: SimConfig, params=None, geom=None, alloc=None) -> Dataset:
    """Run the closed loop described by ``config`` and return a dataset.

    The returned dataset's ``aux`` dict carries in-memory diagnostics that
    are not written to disk: noise-free truth (``truth_clean``), per-foot
    slip flags and stance sink depths.
    """
    try:
        config.validate()
        n_period = period_frames(config.gait.period, config.dt)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("gait.period", str(exc)) from None
    params = params or RobotParams()
    geom = geom or LegGeometry()
    alloc = alloc or AllocatorParams()
    dt, n = config.dt, config.n_frames
    terrain = config.terrain
    noise = config.noise
    camera = camera_from_config(config.camera)

    ss = np.random.SeedSequence(config.seed)
    rng_cmd, rng_slip, rng_noise = (np.random.default_rng(s) for s in ss.spawn(3))

    if config.command.mode == "stand":
        contact = np.ones((n, 4), dtype=bool)
    else:
        contact = contact_at(np.arange(n), n_period, config.gait.duty)
    n_stance = int(round(config.gait.duty * n_period))
    n_swing = n_period - n_stance
    t_stance = n_stance * dt

    # nominal foot placement in the body frame (xy only)
    p_nom = geom.hip_offsets.copy()
    p_nom[:, 1] += np.array([1.0, -1.0, 1.0, -1.0]) * geom.l1

    x = np.zeros(12)
    x[5] = config.nominal_height + terrain.height(0.0, 0.0)
    feet = np.column_stack([p_nom[:, :2], terrain.height(p_nom[:, 0], p_nom[:, 1])])
    anchor_ground = feet[:, 2].copy()
    stance_age = np.zeros(4)
    lift = feet.copy()
    target = feet.copy()
    last_stance = np.zeros(4, dtype=np.int64)

    cmd = _Commander(config.command, rng_cmd, x, terrain, config.nominal_height, dt)

    truth = np.empty((n, 12))
    Theta = np.empty((n, 12))
    ThetaDot = np.empty((n, 12))
    forces = np.empty((n, 12))
    acc_w = np.zeros((n, 3))
    alpha_w = np.zeros((n, 3))
    slip = np.zeros((n, 4), dtype=bool)
    sink = np.zeros((n, 4))
    depth_index = np.empty(n, dtype=np.int64)
    depth_images = []
    last_tick = None

    v_prev = x[VEL].copy()
    w_prev = x[OMEGA].copy()
    for k in range(n):
        t = k * dt
        C = contact[k]
        R = euler_to_rotation(x[THETA])
        v_ref_xy = cmd.advance(t, x)
        foot_vel = np.zeros((4, 3))
        for i in range(4):
            was_stance = contact[k - 1, i] if k > 0 else True
            if C[i]:
                if not was_stance:
                    feet[i] = target[i]
                    anchor_ground[i] = target[i, 2]
                    stance_age[i] = 0.0
                if terrain.compliance_rate > 0:
                    D = terrain.compliance_depth
                    decay = np.exp(-terrain.compliance_rate * stance_age[i] / D)
                    sink[k, i] = D * (1.0 - decay)
                    feet[i, 2] = anchor_ground[i] - sink[k, i]
                    foot_vel[i, 2] = -terrain.compliance_rate * decay
                if terrain.slip_rate > 0 and rng_slip.random() < terrain.slip_rate:
                    speed = np.hypot(*v_ref_xy)
                    if speed > 0.05:
                        direction = -v_ref_xy / speed
                    else:
                        ang = rng_slip.uniform(-np.pi, np.pi)
                        direction = np.array([np.cos(ang), np.sin(ang)])
                    foot_vel[i, :2] = terrain.slip_speed * direction
                    slip[k, i] = True
                stance_age[i] += dt
            else:
                if was_stance:
                    last_stance[i] = k - 1
                    lift[i] = feet[i]
                    t_td = (n_swing + 1) * dt - dt
                    yaw_td = cmd.yaw + cmd.yaw_rate * t_td
                    hip_td = x[3:5] + v_ref_xy * t_td + rot_z(yaw_td)[:2, :2] @ p_nom[i, :2]
                    tgt = hip_td + v_ref_xy * t_stance / 2 + RAIBERT_GAIN * (x[9:11] - v_ref_xy)
                    target[i] = [tgt[0], tgt[1], terrain.height(tgt[0], tgt[1])]
                s = (k - last_stance[i]) / (n_swing + 1)
                sig, dsig = _smooth(s)
                bump, dbump = _bump(s, config.gait.swing_height)
                rate = 1.0 / ((n_swing + 1) * dt)
                feet[i] = lift[i] + (target[i] - lift[i]) * sig
                feet[i, 2] += bump
                foot_vel[i] = ((target[i] - lift[i]) * dsig + np.array([0.0, 0.0, dbump])) * rate

        # body-frame foot kinematics and joint readings
        omega_b = R.T @ x[OMEGA]
        p_b = (feet - x[POS]) @ R
        pdot_b = (foot_vel - x[VEL]) @ R - np.cross(omega_b, p_b)
        for i in range(4):
            q = inverse_kinematics(p_b[i], geom, i)
            Theta[k, 3 * i:3 * i + 3] = q
            ThetaDot[k, 3 * i:3 * i + 3] = np.linalg.solve(jacobian(q, geom, i), pdot_b[i])

        truth[k] = x
        if k > 0:
            acc_w[k] = (x[VEL] - v_prev) / dt
            alpha_w[k] = (x[OMEGA] - w_prev) / dt
        v_prev, w_prev = x[VEL].copy(), x[OMEGA].copy()

        tick = depth_tick(k, dt, config.camera.rate)
        if config.render_depth and tick != last_tick:
            depth_images.append(render_depth(terrain, x, camera).astype(np.float32))
            last_tick = tick
        depth_index[k] = len(depth_images) - 1 if config.render_depth else -1

        x_ref = cmd.reference(x, v_ref_xy)
        f = allocate(x, x_ref, p_b, C, alloc, params)
        if k + 1 < n:
            forces[k + 1] = f
        if k == 0:
            forces[0] = f
        x = dyn_step(x, f, p_b, params, dt)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"simulation diverged at frame {k}")

    # sensors
    def gauss(std, shape):
        return std * rng_noise.standard_normal(shape) if std > 0 else np.zeros(shape)

    imu_theta = truth[:, THETA] + gauss(noise.imu_theta, (n, 3))
    imu_omega = truth[:, OMEGA] + gauss(noise.imu_omega, (n, 3))
    Rs = np.stack([euler_to_rotation(th) for th in truth[:, THETA]])
    imu_acc = np.einsum("nji,nj->ni", Rs, acc_w - _GRAVITY_W) + gauss(noise.imu_acc, (n, 3))
    imu_alpha = alpha_w + gauss(noise.imu_alpha, (n, 3))
    Theta_meas = Theta + gauss(noise.joint_pos, (n, 12))
    ThetaDot_meas = ThetaDot + gauss(noise.joint_vel, (n, 12))
    mocap = truth + gauss(noise.mocap, (n, 12))

    if depth_images:
        depth = np.stack(depth_images)
    else:
        depth = np.zeros((0, config.camera.height, config.camera.width), dtype=np.float32)
    ds = Dataset(
        dt=dt, t=np.arange(n) * dt, Theta=Theta_meas, ThetaDot=ThetaDot_meas,
        imu_theta=imu_theta, imu_omega=imu_omega, imu_acc=imu_acc, imu_alpha=imu_alpha,
        contact=contact.copy(), forces=forces, depth_index=depth_index, depth=depth,
        truth=mocap, meta=dict(format_config(config)),
    )
    ds.aux.update(truth_clean=truth, slip=slip, sink=sink)
    return ds


def format_config(config):
    return [(k, v if isinstance(v, str) else format_kv([(k, v)]).split(" = ", 1)[1].strip())
            for k, v in to_kv(config)]
