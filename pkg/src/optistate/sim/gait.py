"""Diagonal-pair trot schedule on the integer frame grid."""
import numpy as np

# FL, FR, RL, RR: the FL/RR pair leads, FR/RL trails by half a period
PHASE_OFFSET = np.array([0.0, 0.5, 0.5, 0.0])


def period_frames(period, dt):
    n = period / dt
    if abs(n - round(n)) > 1e-6:
        raise ValueError("gait period must be a whole number of time steps")
    return int(round(n))


def gait_phase(k, n_period):
    """Gait phase in [0, 1) per foot at frame(s) ``k``."""
    k = np.asarray(k, dtype=np.int64)[..., None]
    shift = np.rint(PHASE_OFFSET * n_period).astype(np.int64)
    return np.mod(k + shift, n_period) / n_period


def contact_at(k, n_period, duty):
    """Stance flags at frame(s) ``k``, shape ``k.shape + (4,)``."""
    k = np.asarray(k, dtype=np.int64)[..., None]
    shift = np.rint(PHASE_OFFSET * n_period).astype(np.int64)
    return np.mod(k + shift, n_period) < duty * n_period - 1e-9


def gait_schedule(config):
    """Contact flags for every frame of ``config`` (shape ``(n_frames, 4)``)."""
    n_period = period_frames(config.gait.period, config.dt)
    return contact_at(np.arange(config.n_frames), n_period, config.gait.duty)
