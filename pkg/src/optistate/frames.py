"""Per-timestep sensor records and the columnar dataset container."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class ImuSample:
    theta: np.ndarray   # roll/pitch/yaw (rad)
    omega: np.ndarray   # world-frame angular rate (rad/s)
    acc: np.ndarray     # body-frame specific force (m/s^2)
    alpha: np.ndarray   # angular acceleration (rad/s^2)


@dataclass
class SensorFrame:
    t: float
    Theta: np.ndarray
    ThetaDot: np.ndarray
    imu: ImuSample
    contact: np.ndarray
    forces: np.ndarray
    depth: Optional[np.ndarray] = None
    depth_id: int = -1
    truth: Optional[np.ndarray] = None


# Column layout of the fixed-width frame record (all float64).
FRAME_FIELDS = (
    ("t", 1),
    ("Theta", 12),
    ("ThetaDot", 12),
    ("imu_theta", 3),
    ("imu_omega", 3),
    ("imu_acc", 3),
    ("imu_alpha", 3),
    ("contact", 4),
    ("forces", 12),
    ("depth_index", 1),
    ("truth", 12),
)
RECORD_WIDTH = sum(n for _, n in FRAME_FIELDS)


@dataclass
class Dataset:
    """A trajectory stored column-wise.

    ``depth_index[k]`` points into ``depth`` (shape ``(M, H, W)``, float32);
    consecutive frames share an index while the camera image is held.
    """
    dt: float
    t: np.ndarray
    Theta: np.ndarray
    ThetaDot: np.ndarray
    imu_theta: np.ndarray
    imu_omega: np.ndarray
    imu_acc: np.ndarray
    imu_alpha: np.ndarray
    contact: np.ndarray
    forces: np.ndarray
    depth_index: np.ndarray
    depth: np.ndarray
    truth: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict, repr=False, compare=False)  # in-memory diagnostics only

    def __len__(self):
        return len(self.t)

    @property
    def has_truth(self):
        return self.truth is not None and np.all(np.isfinite(self.truth))

    def frame(self, k):
        di = int(self.depth_index[k])
        return SensorFrame(
            t=float(self.t[k]),
            Theta=self.Theta[k],
            ThetaDot=self.ThetaDot[k],
            imu=ImuSample(self.imu_theta[k], self.imu_omega[k], self.imu_acc[k], self.imu_alpha[k]),
            contact=self.contact[k].astype(bool),
            forces=self.forces[k],
            depth=self.depth[di] if di >= 0 else None,
            depth_id=di,
            truth=None if self.truth is None else self.truth[k],
        )

    def __iter__(self):
        for k in range(len(self)):
            yield self.frame(k)

    def to_records(self):
        truth = self.truth if self.truth is not None else np.full((len(self), 12), np.nan)
        cols = [self.t[:, None], self.Theta, self.ThetaDot, self.imu_theta, self.imu_omega,
                self.imu_acc, self.imu_alpha, self.contact.astype(np.float64), self.forces,
                self.depth_index[:, None].astype(np.float64), truth]
        return np.ascontiguousarray(np.hstack(cols), dtype="<f8")

    @classmethod
    def from_records(cls, dt, records, depth, meta=None):
        out = {}
        col = 0
        for name, n in FRAME_FIELDS:
            out[name] = records[:, col:col + n]
            col += n
        truth = out["truth"]
        return cls(
            dt=dt,
            t=out["t"][:, 0].copy(),
            Theta=out["Theta"].copy(),
            ThetaDot=out["ThetaDot"].copy(),
            imu_theta=out["imu_theta"].copy(),
            imu_omega=out["imu_omega"].copy(),
            imu_acc=out["imu_acc"].copy(),
            imu_alpha=out["imu_alpha"].copy(),
            contact=out["contact"].astype(bool),
            forces=out["forces"].copy(),
            depth_index=out["depth_index"][:, 0].astype(np.int64),
            depth=depth,
            truth=None if np.all(np.isnan(truth)) else truth.copy(),
            meta=dict(meta or {}),
        )
