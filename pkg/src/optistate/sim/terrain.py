"""Procedural terrains: flat, slippery (flat geometry), incline and rough.

Terrain geometry is packed into a small float array so the same height
function can run inside numba kernels and as vectorized numpy.
"""
from dataclasses import dataclass

import numpy as np

from .._accel import njit

KINDS = ("flat", "slippery", "incline", "rough")
_GEOM_CODE = {"flat": 0, "slippery": 0, "incline": 1, "rough": 2}


def _height(code, prm, x, y):
    # prm: [slope, ramp_start, amplitude, cell, seed, slope_bound]
    if code == 1:
        return prm[0] * np.maximum(x - prm[1], 0.0)
    if code == 2:
        gx = x / prm[3]
        gy = y / prm[3]
        ix = np.floor(gx)
        iy = np.floor(gy)
        fx = gx - ix
        fy = gy - iy
        sx = fx * fx * (3.0 - 2.0 * fx)
        sy = fy * fy * (3.0 - 2.0 * fy)
        s = prm[4]
        v00 = _lattice_np(ix, iy, s)
        v10 = _lattice_np(ix + 1.0, iy, s)
        v01 = _lattice_np(ix, iy + 1.0, s)
        v11 = _lattice_np(ix + 1.0, iy + 1.0, s)
        a = v00 + (v10 - v00) * sx
        b = v01 + (v11 - v01) * sx
        return prm[2] * (a + (b - a) * sy)
    return 0.0 * x


def _lattice(ix, iy, seed):
    """Deterministic pseudo-random value in [-1, 1] per integer lattice node."""
    h = (np.int64(ix) * 73856093) ^ (np.int64(iy) * 19349663) ^ (np.int64(seed) * 83492791)
    h = (h ^ (h >> 13)) * 1274126177
    h = h ^ (h >> 16)
    return (h & 65535) / 32767.5 - 1.0


def _lattice_np(ix, iy, seed):
    h = (ix.astype(np.int64) * 73856093) ^ (iy.astype(np.int64) * 19349663) ^ (np.int64(seed) * 83492791)
    h = (h ^ (h >> 13)) * 1274126177
    h = h ^ (h >> 16)
    return (h & 65535) / 32767.5 - 1.0


height_np = _height
_lattice_jit = njit(_lattice)


@njit
def height_jit(code, prm, x, y):
    if code == 1:
        return prm[0] * max(x - prm[1], 0.0)
    if code == 2:
        gx = x / prm[3]
        gy = y / prm[3]
        ix = np.floor(gx)
        iy = np.floor(gy)
        fx = gx - ix
        fy = gy - iy
        sx = fx * fx * (3.0 - 2.0 * fx)
        sy = fy * fy * (3.0 - 2.0 * fy)
        s = prm[4]
        v00 = _lattice_jit(ix, iy, s)
        v10 = _lattice_jit(ix + 1.0, iy, s)
        v01 = _lattice_jit(ix, iy + 1.0, s)
        v11 = _lattice_jit(ix + 1.0, iy + 1.0, s)
        a = v00 + (v10 - v00) * sx
        b = v01 + (v11 - v01) * sx
        return prm[2] * (a + (b - a) * sy)
    return 0.0


@dataclass(frozen=True)
class Terrain:
    kind: str = "flat"
    incline_deg: float = 8.0
    ramp_start: float = 0.5
    slip_rate: float = 0.0
    slip_speed: float = 0.0
    rough_amplitude: float = 0.0
    rough_cell: float = 0.35
    compliance_rate: float = 0.0
    compliance_depth: float = 0.012
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}")

    @classmethod
    def preset(cls, kind, seed=0):
        """Default disturbance settings for each terrain kind."""
        if kind == "slippery":
            return cls(kind, slip_rate=0.08, slip_speed=0.4, seed=seed)
        if kind == "rough":
            return cls(kind, rough_amplitude=0.04, compliance_rate=0.02, seed=seed)
        return cls(kind, seed=seed)

    @property
    def code(self):
        return _GEOM_CODE[self.kind]

    @property
    def params(self):
        return np.array([np.tan(np.radians(self.incline_deg)), self.ramp_start,
                         self.rough_amplitude, self.rough_cell, float(self.seed % 100003),
                         self.slope_bound])

    @property
    def slope_bound(self):
        """Upper bound on the terrain gradient norm."""
        if self.code == 1:
            return abs(np.tan(np.radians(self.incline_deg)))
        if self.code == 2:
            # smoothstep slope 1.5, lattice jump <= 2, both axes
            return 3.0 * np.sqrt(2.0) * abs(self.rough_amplitude) / self.rough_cell
        return 0.0

    def height(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        h = height_np(self.code, self.params, np.atleast_1d(x), np.atleast_1d(y))
        return h.reshape(x.shape) if x.ndim else float(h[0])

    @property
    def max_height_hint(self):
        """Upper bound on terrain height, or +inf when unbounded (incline)."""
        if self.code == 1:
            return np.inf
        return abs(self.rough_amplitude)
