"""The full estimator: Kalman filter, depth latents and the GRU correction.

``run_pipeline`` processes a whole dataset with batched network calls;
``Pipeline.step`` does the same one frame at a time for online use. Both
produce identical estimates.
"""
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .frames import Dataset
from .kalman import KalmanBelief, KalmanFilter, leg_odometry
from .nn import gru as gru_mod
from .nn import vit as vit_mod
from .nn.features import Normalizer, build_input_window, frame_features, stack_features
from .state import STATE_DIM

LATENT_DIM = 128


@dataclass
class Models:
    """Trained networks. ``vit_params`` may be None for the vision ablation."""
    gru_params: dict
    normalizer: Normalizer
    gru_cfg: gru_mod.GruConfig
    vit_params: Optional[dict] = None
    vit_cfg: Optional[vit_mod.VitConfig] = None

    @property
    def uses_vision(self):
        return self.vit_params is not None and not self.gru_cfg.ablate_vision


def filter_with_odometry(ds: Dataset, kf: KalmanFilter, x0=None, p0=1e-2):
    """KF estimates plus the body-frame feet and foot rates of every frame."""
    n = len(ds)
    if x0 is None:
        x0 = ds.truth[0] if ds.truth is not None else np.concatenate([ds.imu_theta[0], np.zeros(9)])
    xs = np.empty((n, STATE_DIM))
    p = np.empty((n, 12))
    pdot = np.empty((n, 12))
    belief = None
    for k in range(n):
        frame = ds.frame(k)
        odom = leg_odometry(frame, kf.geom, kf.raw_body_z)
        if belief is None:
            belief = KalmanBelief.initial(x0, p0)
        else:
            belief = kf.step(belief, frame, odom)
        belief.feet_prev = odom.p
        xs[k] = belief.x
        p[k] = odom.p.reshape(-1)
        pdot[k] = odom.pdot.reshape(-1)
    return xs, p, pdot


def frame_latents(ds: Dataset, vit_params, vit_cfg):
    """Depth latent held at every frame (zeros without a ViT or depth)."""
    out = np.zeros((len(ds), LATENT_DIM))
    if vit_params is None or ds.depth.shape[0] == 0:
        return out
    lat = vit_mod.latents(ds.depth, vit_params, vit_cfg)
    live = ds.depth_index >= 0
    out[live] = lat[ds.depth_index[live]]
    return out


def trajectory_features(ds, kf, vit_params=None, vit_cfg=None, x0=None, kf_out=None):
    """``(features (n, 182), x_hat (n, 12))`` for a dataset.

    ``kf_out`` reuses an earlier :func:`filter_with_odometry` result.
    """
    x_hat, p, pdot = kf_out if kf_out is not None else filter_with_odometry(ds, kf, x0)
    lat = frame_latents(ds, vit_params, vit_cfg)
    F = stack_features(x_hat, lat, p, pdot, ds.imu_acc, ds.imu_alpha, ds.forces)
    return F, x_hat


def run_pipeline(ds, kf, models: Models, x0=None, features=None):
    """Batched estimates for a whole dataset: ``(x_hat, GruEstimate)``."""
    if features is None:
        vit = (models.vit_params, models.vit_cfg) if models.uses_vision else (None, None)
        features = trajectory_features(ds, kf, *vit, x0=x0)
    F, x_hat = features
    est = gru_mod.predict(models.gru_params, models.normalizer, models.gru_cfg, F, x_hat)
    return x_hat, est


class Pipeline:
    """Streaming estimator holding the KF belief, the held latent and the window."""

    def __init__(self, kf: KalmanFilter, models: Models, x0=None, p0=1e-2):
        self.kf = kf
        self.models = models
        self.x0 = x0
        self.p0 = p0
        self.belief = None
        self.history = deque(maxlen=models.gru_cfg.horizon)
        self._latent = np.zeros(LATENT_DIM)
        self._latent_id = None

    def _latent_for(self, frame):
        if not self.models.uses_vision or frame.depth is None:
            return np.zeros(LATENT_DIM)
        if frame.depth_id != self._latent_id:
            self._latent = vit_mod.encode(frame.depth, self.models.vit_params, self.models.vit_cfg)[1]
            self._latent_id = frame.depth_id
        return self._latent

    def step(self, frame):
        """Process one frame; returns ``(x_hat, GruEstimate)``."""
        odom = leg_odometry(frame, self.kf.geom, self.kf.raw_body_z)
        if self.belief is None:
            x0 = self.x0 if self.x0 is not None else np.concatenate([frame.imu.theta, np.zeros(9)])
            self.belief = KalmanBelief.initial(x0, self.p0)
        else:
            self.belief = self.kf.step(self.belief, frame, odom)
        self.belief.feet_prev = odom.p
        x_hat = self.belief.x.copy()
        self.history.append(frame_features(x_hat, self._latent_for(frame), odom.p, odom.pdot,
                                           frame.imu.acc, frame.imu.alpha, frame.forces))
        m = self.models
        window = build_input_window(list(self.history), m.gru_cfg.horizon)
        est = gru_mod.gru_forward(window, m.gru_params, m.normalizer, m.gru_cfg, x_hat=x_hat)
        return x_hat, est


def estimate_step(pipeline: Pipeline, frame):
    """One online step of ``pipeline``; see :meth:`Pipeline.step`."""
    return pipeline.step(frame)
