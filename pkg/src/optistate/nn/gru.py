"""Stacked GRU correction network with an uncertainty head.

Each window of normalized features runs through ``n_layers`` GRU layers
(zero initial state); a linear head on the last top-layer state emits 12
state channels and 12 uncertainty channels. The state channels predict the
normalized correction ``truth - x_hat`` (or the normalized state itself when
the KF estimate is not an input); the uncertainty channels pass through a
softplus and are trained toward the detached absolute state error.
"""
import dataclasses
from dataclasses import dataclass

import numpy as np

from ..binio import Reader, check_magic, pack_tensors, pack_text, unpack_tensors
from ..config import apply_kv, format_kv, to_kv
from ..errors import CheckpointMismatch, DivergedError, MissingTruth, ShapeError
from .features import INPUT_DIM, Normalizer, ablation_mask, window_indices
from .layers import matmul, sigmoid, softplus
from .optim import Adam, lr_at

MAGIC = b"OSGR"
VERSION = 1
STATE_OUT = 12


@dataclass(frozen=True)
class GruConfig:
    input_dim: int = INPUT_DIM
    hidden_size: int = 128
    n_layers: int = 4
    horizon: int = 10
    output_dim: int = 24
    residual: bool = True
    ablate_kf: bool = False
    ablate_vision: bool = False

    def __post_init__(self):
        if min(self.input_dim, self.hidden_size, self.n_layers, self.horizon) < 1:
            raise ShapeError("GRU dimensions must be positive")
        if self.output_dim != 2 * STATE_OUT:
            raise ShapeError(f"output_dim must be {2 * STATE_OUT}")

    @property
    def uses_residual(self):
        # without the KF estimate as input there is nothing to correct
        return self.residual and not self.ablate_kf

    @property
    def mask(self):
        return ablation_mask(self.ablate_kf, self.ablate_vision)


@dataclass(frozen=True)
class GruTrainConfig:
    lr: float = 1e-5
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    max_steps: int = 0  # 0 = no limit
    schedule: str = "constant"  # or "cosine" (decays to zero at the last step)


@dataclass
class GruEstimate:
    x_bar: np.ndarray
    mu: np.ndarray


def init_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    H = cfg.hidden_size
    bound = 1.0 / np.sqrt(H)
    p = {}
    for layer in range(cfg.n_layers):
        n_in = cfg.input_dim if layer == 0 else H
        p[f"l{layer}.W"] = rng.uniform(-bound, bound, (n_in, 3 * H))
        p[f"l{layer}.U"] = rng.uniform(-bound, bound, (H, 3 * H))
        p[f"l{layer}.b"] = np.zeros(3 * H)
    p["head.W"] = rng.uniform(-bound, bound, (H, cfg.output_dim))
    p["head.b"] = np.zeros(cfg.output_dim)
    return p


def zero_params(cfg):
    return {k: np.zeros_like(v) for k, v in init_params(cfg).items()}


# -- recurrence ----------------------------------------------------------------

def forward_raw(params, X, cfg):
    """Head output ``(B, 24)`` before the output mapping, plus the BPTT cache.

    Gates per layer: ``z`` (update), ``r`` (reset), candidate
    ``n = tanh(x Wn + (r*h) Un + bn)``, ``h' = (1 - z) n + z h``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != cfg.input_dim:
        raise ShapeError(f"window batch must be (B, N, {cfg.input_dim}), got {X.shape}")
    X = X[:, -cfg.horizon:]
    B, N, _ = X.shape
    H = cfg.hidden_size
    inp = X
    caches = []
    for layer in range(cfg.n_layers):
        U = params[f"l{layer}.U"]
        xw = matmul(inp, params[f"l{layer}.W"]) + params[f"l{layer}.b"]
        h = np.zeros((B, H))
        hs = np.empty((B, N, H))
        steps = []
        for t in range(N):
            zr = sigmoid(xw[:, t, :2 * H] + h @ U[:, :2 * H])
            z, r = zr[:, :H], zr[:, H:]
            rh = r * h
            n = np.tanh(xw[:, t, 2 * H:] + rh @ U[:, 2 * H:])
            steps.append((z, r, n, h, rh))
            h = (1.0 - z) * n + z * h
            hs[:, t] = h
        caches.append((inp, steps))
        inp = hs
    h_top = inp[:, -1]
    out = h_top @ params["head.W"] + params["head.b"]
    return out, (caches, h_top)


def backward_raw(d_out, params, cache, cfg):
    caches, h_top = cache
    H = cfg.hidden_size
    g = {"head.W": h_top.T @ d_out, "head.b": d_out.sum(0)}
    B, N = caches[0][0].shape[:2]
    dH = np.zeros((B, N, H))
    dH[:, -1] = d_out @ params["head.W"].T
    for layer in reversed(range(cfg.n_layers)):
        inp, steps = caches[layer]
        U = params[f"l{layer}.U"]
        Uzr, Un = U[:, :2 * H], U[:, 2 * H:]
        dU = np.zeros_like(U)
        dxw = np.empty((B, N, 3 * H))
        dh = np.zeros((B, H))
        for t in reversed(range(N)):
            z, r, n, hp, rh = steps[t]
            dh = dh + dH[:, t]
            dn = dh * (1.0 - z)
            dz = dh * (hp - n)
            dhp = dh * z
            dan = dn * (1.0 - n * n)
            dU[:, 2 * H:] += rh.T @ dan
            drh = dan @ Un.T
            dhp += drh * r
            dazr = np.concatenate([dz * z * (1.0 - z), drh * hp * r * (1.0 - r)], axis=1)
            dU[:, :2 * H] += hp.T @ dazr
            dhp += dazr @ Uzr.T
            dxw[:, t, :2 * H] = dazr
            dxw[:, t, 2 * H:] = dan
            dh = dhp
        flat_in = inp.reshape(-1, inp.shape[-1])
        flat_dxw = dxw.reshape(-1, 3 * H)
        g[f"l{layer}.W"] = flat_in.T @ flat_dxw
        g[f"l{layer}.U"] = dU
        g[f"l{layer}.b"] = flat_dxw.sum(0)
        dH = matmul(dxw, params[f"l{layer}.W"].T)
    return g


def split_output(raw):
    """Normalized state channels and nonnegative normalized uncertainty."""
    return raw[:, :STATE_OUT], softplus(raw[:, STATE_OUT:])


def loss_and_grad(params, Xn, Tn, cfg, mu_target=None):
    """``MSE(state, target) + MSE(mu, detached |state - target|)``, normalized units.

    ``mu_target`` overrides the detached error (useful for gradient checks,
    where the target must not move with the parameters).
    """
    raw, cache = forward_raw(params, Xn, cfg)
    state, mu = split_output(raw)
    err = state - Tn
    target_mu = np.abs(err) if mu_target is None else mu_target
    emu = mu - target_mu
    loss = float(np.mean(err * err) + np.mean(emu * emu))
    d_raw = np.empty_like(raw)
    d_raw[:, :STATE_OUT] = 2.0 * err / err.size
    d_raw[:, STATE_OUT:] = 2.0 * emu / emu.size * sigmoid(raw[:, STATE_OUT:])
    return loss, backward_raw(d_raw, params, cache, cfg)


# -- data plumbing ---------------------------------------------------------------

def _masked(F, cfg):
    F = np.array(F, dtype=np.float64, copy=True)
    F[..., cfg.mask] = 0.0
    return F


def targets_for(x_hat, truth, cfg):
    return truth - x_hat if cfg.uses_residual else np.array(truth, dtype=np.float64)


def to_estimate(raw, x_hat, normalizer, cfg):
    state_n, mu_n = split_output(raw)
    y = normalizer.denorm_out(state_n)
    x_bar = x_hat + y if cfg.uses_residual else y
    return GruEstimate(x_bar=x_bar, mu=mu_n * normalizer.out_span)


class _WindowSet:
    """All stride-1 windows of a list of trajectories, gathered lazily."""

    def __init__(self, feats, targets, horizon):
        self.F = np.concatenate(feats)
        self.T = np.concatenate(targets)
        idx, start = [], 0
        for f in feats:
            idx.append(window_indices(len(f), horizon) + start)
            start += len(f)
        self.idx = np.concatenate(idx)

    def __len__(self):
        return len(self.idx)

    def batch(self, rows):
        sel = self.idx[rows]
        return self.F[sel], self.T[sel[:, -1]]


def prepare_training(features, x_hats, truths, cfg):
    """Masked features, targets and a fitted normalizer for ``train_gru``."""
    for t in truths:
        if t is None or not np.all(np.isfinite(t)):
            raise MissingTruth("every training frame needs ground truth")
    feats = [_masked(f, cfg) for f in features]
    targets = [targets_for(xh, tr, cfg) for xh, tr in zip(x_hats, truths)]
    norm = Normalizer.fit(np.concatenate(feats), np.concatenate(targets))
    windows = _WindowSet([norm.norm_in(f) for f in feats], [norm.norm_out(t) for t in targets],
                         cfg.horizon)
    return windows, norm


def dataset_loss(params, windows, cfg, batch=1024):
    total = 0.0
    for s in range(0, len(windows), batch):
        rows = np.arange(s, min(s + batch, len(windows)))
        X, T = windows.batch(rows)
        raw, _ = forward_raw(params, X, cfg)
        state, mu = split_output(raw)
        err = state - T
        total += (np.sum(err * err) + np.sum((mu - np.abs(err)) ** 2)) / STATE_OUT
    return total / len(windows)


def train_gru(features, x_hats, truths, cfg, hp=GruTrainConfig(), params=None, log=None):
    """Fit the correction network; returns ``(params, normalizer, epoch_losses)``."""
    windows, norm = prepare_training(features, x_hats, truths, cfg)
    params = params if params is not None else init_params(cfg, hp.seed)
    opt = Adam(params, hp.lr, weight_decay=hp.weight_decay, decoupled=False)
    rng = np.random.default_rng(hp.seed + 1)
    total_steps = hp.epochs * -(-len(windows) // hp.batch_size)
    if hp.max_steps:
        total_steps = min(total_steps, hp.max_steps)
    history, steps = [], 0
    for epoch in range(hp.epochs):
        order = rng.permutation(len(windows))
        total = 0.0
        seen = 0
        for s in range(0, len(order), hp.batch_size):
            rows = order[s:s + hp.batch_size]
            loss, grads = loss_and_grad(params, *windows.batch(rows), cfg)
            if not np.isfinite(loss):
                raise DivergedError(f"GRU loss became non-finite in epoch {epoch}")
            opt.lr = lr_at(hp.lr, steps, total_steps, hp.schedule)
            opt.step(params, grads)
            if not all(np.isfinite(v).all() for v in params.values()):
                raise DivergedError(f"GRU parameters became non-finite in epoch {epoch}")
            total += loss * len(rows)
            seen += len(rows)
            steps += 1
            if hp.max_steps and steps >= hp.max_steps:
                break
        history.append(total / seen)
        if log:
            log(epoch, history[-1])
        if hp.max_steps and steps >= hp.max_steps:
            break
    return params, norm, np.array(history)


def predict(params, normalizer, cfg, features, x_hat, batch=1024):
    """Corrected states and uncertainties for every frame of one trajectory."""
    F = normalizer.norm_in(_masked(features, cfg))
    idx = window_indices(len(F), cfg.horizon)
    raws = np.empty((len(F), cfg.output_dim))
    for s in range(0, len(F), batch):
        raws[s:s + batch], _ = forward_raw(params, F[idx[s:s + batch]], cfg)
    return to_estimate(raws, x_hat, normalizer, cfg)


def gru_forward(window, params, normalizer, cfg, x_hat=None):
    """Single-window estimate; ``window`` is an un-normalized ``(N', 182)`` block."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != cfg.input_dim or len(window) < cfg.horizon:
        raise ShapeError(f"window must be (>= {cfg.horizon}, {cfg.input_dim})")
    W = normalizer.norm_in(_masked(window[-cfg.horizon:], cfg))
    raw, _ = forward_raw(params, W[None], cfg)
    if x_hat is None:
        x_hat = window[-1, :STATE_OUT]
    est = to_estimate(raw, np.asarray(x_hat)[None], normalizer, cfg)
    return GruEstimate(est.x_bar[0], est.mu[0])


# -- checkpoints -----------------------------------------------------------------

_NORM_FIELDS = ("in_min", "in_max", "out_min", "out_max")


def save_gru(path, params, normalizer, cfg):
    tensors = dict(sorted(params.items()))
    tensors.update({f"norm.{f}": getattr(normalizer, f) for f in _NORM_FIELDS})
    body = MAGIC + np.uint32(VERSION).astype("<u4").tobytes()
    body += pack_text(format_kv(to_kv(cfg))) + pack_tensors(tensors)
    with open(path, "wb") as fh:
        fh.write(body)


def load_gru(path, expect=None):
    with open(path, "rb") as fh:
        r = Reader(fh.read(), what=str(path))
    check_magic(r, MAGIC, VERSION)
    mapping = dict(line.split(" = ", 1) for line in r.text().splitlines() if line.strip())
    cfg = apply_kv(GruConfig(), mapping)
    tensors = unpack_tensors(r)
    r.expect_end()
    try:
        normalizer = Normalizer(*(tensors.pop(f"norm.{f}") for f in _NORM_FIELDS))
    except KeyError:
        raise CheckpointMismatch("GRU checkpoint lacks normalizer tensors") from None
    ref = init_params(cfg)
    if set(ref) != set(tensors) or any(ref[k].shape != tensors[k].shape for k in ref):
        raise CheckpointMismatch("GRU tensors do not match the echoed config")
    if expect is not None and expect != cfg:
        raise CheckpointMismatch(f"GRU checkpoint config {cfg} differs from expected {expect}")
    return tensors, normalizer, cfg
