"""Depth images by ray casting the terrain heightfield.

The camera sits on the trunk, pitched 45 degrees down. Pixels store the
distance along the ray, divided by the maximum range and clipped to [0, 1];
rays that miss within range read 1.

Marching steps by the vertical gap shrunk by the terrain slope bound, so a
step can never jump over the surface; the final bracket is bisected.
"""
from dataclasses import dataclass

import numpy as np

from .._accel import njit, pick
from ..state import POS, THETA, euler_to_rotation
from .terrain import height_jit, height_np

MARCH_STEP = 0.02
BISECT_ITERS = 30


@dataclass(frozen=True)
class Camera:
    height: int = 64
    width: int = 64
    fov_deg: float = 70.0
    pitch_deg: float = 45.0
    max_range: float = 4.0
    offset: tuple = (0.25, 0.0, 0.05)  # body frame, from CoM

    @property
    def focal(self):
        return 0.5 * self.width / np.tan(0.5 * np.radians(self.fov_deg))

    def body_rotation(self):
        """Columns are the camera x (right), y (down), z (optical) axes in body frame."""
        c, s = np.cos(np.radians(self.pitch_deg)), np.sin(np.radians(self.pitch_deg))
        z = np.array([c, 0.0, -s])
        x = np.array([0.0, -1.0, 0.0])
        y = np.cross(z, x)
        return np.stack([x, y, z], axis=1)

    def rays_camera(self):
        """Unit ray directions in the camera frame, shape (H, W, 3)."""
        v, u = np.meshgrid(np.arange(self.height) + 0.5, np.arange(self.width) + 0.5, indexing="ij")
        d = np.stack([(u - 0.5 * self.width) / self.focal,
                      (v - 0.5 * self.height) / self.focal,
                      np.ones_like(u)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def pose(self, x):
        """Camera origin and camera-to-world rotation for trunk state ``x``."""
        R = euler_to_rotation(x[THETA])
        origin = x[POS] + R @ np.asarray(self.offset)
        return origin, R @ self.body_rotation()


@njit
def _cast_jit(origin, dirs, code, prm, max_range, step, iters):
    n = dirs.shape[0]
    out = np.empty(n)
    for k in range(n):
        dx, dy, dz = dirs[k, 0], dirs[k, 1], dirs[k, 2]
        t_prev = 0.0
        g_prev = origin[2] - height_jit(code, prm, origin[0], origin[1])
        hit = -1.0
        t = 0.0
        safe = 1.0 / (1.0 + prm[5])
        while t < max_range:
            t = min(t + max(step, g_prev * safe), max_range)
            g = origin[2] + t * dz - height_jit(code, prm, origin[0] + t * dx, origin[1] + t * dy)
            if g <= 0.0 and g_prev > 0.0:
                lo, hi = t_prev, t
                for _ in range(iters):
                    mid = 0.5 * (lo + hi)
                    gm = origin[2] + mid * dz - height_jit(code, prm, origin[0] + mid * dx, origin[1] + mid * dy)
                    if gm > 0.0:
                        lo = mid
                    else:
                        hi = mid
                hit = 0.5 * (lo + hi)
                break
            t_prev = t
            g_prev = g
        out[k] = max_range if hit < 0.0 else hit
    return out


def _cast_np(origin, dirs, code, prm, max_range, step, iters):
    n = dirs.shape[0]
    ox, oy, oz = origin
    g0 = oz - height_np(code, prm, np.full(n, ox), np.full(n, oy))
    lo = np.zeros(n)
    hi = np.full(n, np.nan)
    g_prev = g0
    t_prev = np.zeros(n)
    active = np.ones(n, dtype=bool)
    safe = 1.0 / (1.0 + prm[5])
    t = np.zeros(n)
    while active.any():
        t = np.where(active, np.minimum(t + np.maximum(step, g_prev * safe), max_range), t)
        g = oz + t * dirs[:, 2] - height_np(code, prm, ox + t * dirs[:, 0], oy + t * dirs[:, 1])
        crossed = active & (g <= 0.0) & (g_prev > 0.0)
        lo[crossed] = t_prev[crossed]
        hi[crossed] = t[crossed]
        active &= ~crossed & (t < max_range)
        t_prev = np.where(active, t, t_prev)
        g_prev = np.where(active, g, g_prev)
    found = ~np.isnan(hi)
    lo_f, hi_f, d = lo[found], hi[found], dirs[found]
    for _ in range(iters):
        mid = 0.5 * (lo_f + hi_f)
        gm = oz + mid * d[:, 2] - height_np(code, prm, ox + mid * d[:, 0], oy + mid * d[:, 1])
        above = gm > 0.0
        lo_f = np.where(above, mid, lo_f)
        hi_f = np.where(above, hi_f, mid)
    out = np.full(n, float(max_range))
    out[found] = 0.5 * (lo_f + hi_f)
    return out


_cast = pick(_cast_jit, _cast_np)


def ray_distances(terrain, origin, dirs_world, max_range, kernel=None):
    run = kernel or _cast
    return run(np.asarray(origin, dtype=np.float64), np.ascontiguousarray(dirs_world),
               terrain.code, terrain.params, float(max_range), MARCH_STEP, BISECT_ITERS)


def render_depth(terrain, x, camera=None, kernel=None):
    """Normalized depth image (H, W) seen from trunk state ``x``."""
    camera = camera or Camera()
    origin, Rc = camera.pose(x)
    dirs = camera.rays_camera().reshape(-1, 3) @ Rc.T
    dist = ray_distances(terrain, origin, dirs, camera.max_range, kernel)
    return np.clip(dist / camera.max_range, 0.0, 1.0).reshape(camera.height, camera.width)
