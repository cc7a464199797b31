"""Per-frame GRU input features, sliding windows and min/max normalization."""
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError

FEATURE_LAYOUT = (
    ("x_hat", 12),
    ("latent", 128),
    ("p", 12),
    ("pdot", 12),
    ("a_imu", 3),
    ("alpha_imu", 3),
    ("forces", 12),
)
INPUT_DIM = sum(n for _, n in FEATURE_LAYOUT)


def _offsets():
    out, col = {}, 0
    for name, n in FEATURE_LAYOUT:
        out[name] = slice(col, col + n)
        col += n
    return out


COLUMNS = _offsets()


def frame_features(x_hat, latent, p, pdot, a_imu, alpha_imu, forces):
    parts = (x_hat, latent, p, pdot, a_imu, alpha_imu, forces)
    out = []
    for (name, n), arr in zip(FEATURE_LAYOUT, parts):
        arr = np.asarray(arr, dtype=np.float64).reshape(-1)
        if arr.size != n:
            raise ShapeError(f"feature {name} has {arr.size} values, expected {n}")
        out.append(arr)
    return np.concatenate(out)


def stack_features(x_hat, latent, p, pdot, a_imu, alpha_imu, forces):
    """Row-wise feature matrix ``(n, 182)`` from per-frame arrays."""
    parts = (x_hat, latent, p, pdot, a_imu, alpha_imu, forces)
    n = len(x_hat)
    cols = []
    for (name, width), arr in zip(FEATURE_LAYOUT, parts):
        arr = np.asarray(arr, dtype=np.float64).reshape(n, -1)
        if arr.shape[1] != width:
            raise ShapeError(f"feature {name} has {arr.shape[1]} columns, expected {width}")
        cols.append(arr)
    return np.hstack(cols)


def ablation_mask(ablate_kf=False, ablate_vision=False):
    """Boolean column mask of features zeroed for an ablation variant."""
    mask = np.zeros(INPUT_DIM, dtype=bool)
    if ablate_kf:
        mask[COLUMNS["x_hat"]] = True
    if ablate_vision:
        mask[COLUMNS["latent"]] = True
    return mask


def window_indices(n, horizon):
    """Row indices of every window ending at frames ``0..n-1``.

    Windows that would start before the first frame repeat it.
    """
    ends = np.arange(n)[:, None]
    return np.maximum(ends - np.arange(horizon - 1, -1, -1)[None, :], 0)


def build_input_window(history, horizon, normalizer=None):
    """Stack the last ``horizon`` feature frames into an ``(N, 182)`` window."""
    rows = [np.asarray(h, dtype=np.float64) for h in history]
    if not rows:
        raise ShapeError("empty feature history")
    if any(r.shape != (INPUT_DIM,) for r in rows):
        raise ShapeError(f"every feature frame must have {INPUT_DIM} values")
    rows = rows[-horizon:]
    rows = [rows[0]] * (horizon - len(rows)) + rows
    W = np.stack(rows)
    return normalizer.norm_in(W) if normalizer is not None else W


@dataclass
class Normalizer:
    """Min/max scaling of inputs and outputs to [0, 1].

    Features with zero span map to 0 and denormalize to their minimum.
    """
    in_min: np.ndarray
    in_max: np.ndarray
    out_min: np.ndarray
    out_max: np.ndarray

    def __post_init__(self):
        if np.any(self.in_max < self.in_min) or np.any(self.out_max < self.out_min):
            raise ValueError("normalizer max must not be below min")

    @classmethod
    def fit(cls, X, Y):
        X = np.asarray(X).reshape(-1, np.shape(X)[-1])
        Y = np.asarray(Y).reshape(-1, np.shape(Y)[-1])
        return cls(X.min(0), X.max(0), Y.min(0), Y.max(0))

    @staticmethod
    def _scale(lo, hi):
        span = hi - lo
        return np.where(span > 0, span, 1.0), span > 0

    def norm_in(self, x):
        span, live = self._scale(self.in_min, self.in_max)
        return np.where(live, (x - self.in_min) / span, 0.0)

    def norm_out(self, y):
        span, live = self._scale(self.out_min, self.out_max)
        return np.where(live, (y - self.out_min) / span, 0.0)

    def denorm_out(self, y):
        span, live = self._scale(self.out_min, self.out_max)
        return np.where(live, y * span, 0.0) + self.out_min

    @property
    def out_span(self):
        return self.out_max - self.out_min
