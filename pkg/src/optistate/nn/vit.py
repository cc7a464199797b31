"""Depth-image autoencoder built from pre-norm transformer blocks.

The encoder embeds non-overlapping patches, adds learned positions and runs
``depth`` blocks followed by a LayerNorm; the depth latent is the token mean.
The decoder mirrors it on the encoder tokens and maps each token back to
patch pixels with a linear head.
"""
import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..binio import Reader, check_magic, pack_tensors, pack_text, unpack_tensors
from ..config import apply_kv, format_kv, to_kv
from ..errors import CheckpointMismatch, DivergedError, ShapeError
from .layers import (gelu_bwd, gelu_fwd, layernorm_bwd, layernorm_fwd, linear_bwd, matmul,
                     mse, softmax, softmax_bwd)
from .optim import Adam

MAGIC = b"OSVT"
VERSION = 1
INIT_STD = 0.02


@dataclass(frozen=True)
class VitConfig:
    image_height: int = 224
    image_width: int = 224
    patch_size: int = 16
    embed_dim: int = 128
    depth: int = 4
    mlp_ratio: int = 4
    n_heads: int = 4

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise ShapeError("embed_dim must be divisible by n_heads")
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ShapeError("image dims must be divisible by patch_size")
        if min(self.patch_size, self.embed_dim, self.depth, self.mlp_ratio, self.n_heads) < 1:
            raise ShapeError("ViT dimensions must be positive")

    @property
    def n_tokens(self):
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)

    @property
    def patch_dim(self):
        return self.patch_size ** 2

    @property
    def head_dim(self):
        return self.embed_dim // self.n_heads


@dataclass(frozen=True)
class VitTrainConfig:
    lr: float = 4e-4
    weight_decay: float = 0.1
    betas: tuple = (0.9, 0.95)
    batch_size: int = 64
    epochs: int = 20
    augment: bool = True
    seed: int = 0


# -- patches -----------------------------------------------------------------

def patchify(img, ps):
    """``(..., H, W)`` image(s) to ``(..., T, ps*ps)`` tokens, row-major patches."""
    img = np.asarray(img)
    H, W = img.shape[-2:]
    if H % ps or W % ps:
        raise ShapeError(f"image {H}x{W} not divisible by patch size {ps}")
    lead = img.shape[:-2]
    x = img.reshape(*lead, H // ps, ps, W // ps, ps)
    x = np.swapaxes(x, -3, -2)
    return x.reshape(*lead, (H // ps) * (W // ps), ps * ps)


def unpatchify(tokens, ps, H, W):
    tokens = np.asarray(tokens)
    if tokens.shape[-2:] != ((H // ps) * (W // ps), ps * ps):
        raise ShapeError(f"token block {tokens.shape[-2:]} does not tile a {H}x{W} image")
    lead = tokens.shape[:-2]
    x = tokens.reshape(*lead, H // ps, W // ps, ps, ps)
    x = np.swapaxes(x, -3, -2)
    return x.reshape(*lead, H, W)


# -- parameters --------------------------------------------------------------

def _trunc_normal(rng, shape, std):
    out = rng.normal(0.0, std, shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _block_params(prefix, cfg, rng):
    D, F = cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio
    return {
        f"{prefix}.ln1.g": np.ones(D), f"{prefix}.ln1.b": np.zeros(D),
        f"{prefix}.qkv.W": _trunc_normal(rng, (D, 3 * D), INIT_STD), f"{prefix}.qkv.b": np.zeros(3 * D),
        f"{prefix}.proj.W": _trunc_normal(rng, (D, D), INIT_STD), f"{prefix}.proj.b": np.zeros(D),
        f"{prefix}.ln2.g": np.ones(D), f"{prefix}.ln2.b": np.zeros(D),
        f"{prefix}.fc1.W": _trunc_normal(rng, (D, F), INIT_STD), f"{prefix}.fc1.b": np.zeros(F),
        f"{prefix}.fc2.W": _trunc_normal(rng, (F, D), INIT_STD), f"{prefix}.fc2.b": np.zeros(D),
    }


def init_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    D, T, P = cfg.embed_dim, cfg.n_tokens, cfg.patch_dim
    p = {"embed.W": _trunc_normal(rng, (P, D), INIT_STD), "embed.b": np.zeros(D),
         "enc.pos": np.zeros((T, D))}
    for i in range(cfg.depth):
        p.update(_block_params(f"enc.{i}", cfg, rng))
    p.update({"enc.norm.g": np.ones(D), "enc.norm.b": np.zeros(D), "dec.pos": np.zeros((T, D))})
    for i in range(cfg.depth):
        p.update(_block_params(f"dec.{i}", cfg, rng))
    p.update({"dec.norm.g": np.ones(D), "dec.norm.b": np.zeros(D),
              "head.W": _trunc_normal(rng, (D, P), INIT_STD), "head.b": np.zeros(P)})
    return p


def param_count(cfg):
    """Closed-form parameter count: embedding, positions, blocks, norms and head."""
    D, T, P, r = cfg.embed_dim, cfg.n_tokens, cfg.patch_dim, cfg.mlp_ratio
    block = (4 + 2 * r) * D * D + (9 + r) * D
    return (P * D + D) + 2 * T * D + 2 * cfg.depth * block + 4 * D + (D * P + P)


# -- transformer block -------------------------------------------------------

def _split_heads(x, n_heads):
    B, T, D = x.shape
    return x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * d)


def _block_fwd(X, p, pre, cfg):
    D = cfg.embed_dim
    h1, c_ln1 = layernorm_fwd(X, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
    qkv = matmul(h1, p[f"{pre}.qkv.W"]) + p[f"{pre}.qkv.b"]
    q, k, v = (_split_heads(qkv[..., i * D:(i + 1) * D], cfg.n_heads) for i in range(3))
    scale = 1.0 / np.sqrt(cfg.head_dim)
    A = softmax((q @ np.swapaxes(k, -1, -2)) * scale)
    O = _merge_heads(A @ v)
    X1 = X + matmul(O, p[f"{pre}.proj.W"]) + p[f"{pre}.proj.b"]
    h2, c_ln2 = layernorm_fwd(X1, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
    u = matmul(h2, p[f"{pre}.fc1.W"]) + p[f"{pre}.fc1.b"]
    gl, c_gelu = gelu_fwd(u)
    X2 = X1 + matmul(gl, p[f"{pre}.fc2.W"]) + p[f"{pre}.fc2.b"]
    return X2, (c_ln1, h1, q, k, v, A, O, c_ln2, h2, c_gelu, gl)


def _block_bwd(dX2, cache, p, pre, cfg, g):
    c_ln1, h1, q, k, v, A, O, c_ln2, h2, c_gelu, gl = cache
    dgl, g[f"{pre}.fc2.W"], g[f"{pre}.fc2.b"] = linear_bwd(dX2, gl, p[f"{pre}.fc2.W"])
    dh2, g[f"{pre}.fc1.W"], g[f"{pre}.fc1.b"] = linear_bwd(gelu_bwd(dgl, c_gelu), h2, p[f"{pre}.fc1.W"])
    dX1, g[f"{pre}.ln2.g"], g[f"{pre}.ln2.b"] = layernorm_bwd(dh2, c_ln2)
    dX1 += dX2
    dO, g[f"{pre}.proj.W"], g[f"{pre}.proj.b"] = linear_bwd(dX1, O, p[f"{pre}.proj.W"])
    dO = _split_heads(dO, cfg.n_heads)
    dA = dO @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(A, -1, -2) @ dO
    dS = softmax_bwd(dA, A) * (1.0 / np.sqrt(cfg.head_dim))
    dq = dS @ k
    dk = np.swapaxes(dS, -1, -2) @ q
    dqkv = np.concatenate([_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=-1)
    dh1, g[f"{pre}.qkv.W"], g[f"{pre}.qkv.b"] = linear_bwd(dqkv, h1, p[f"{pre}.qkv.W"])
    dX, g[f"{pre}.ln1.g"], g[f"{pre}.ln1.b"] = layernorm_bwd(dh1, c_ln1)
    return dX + dX1


# -- encoder / decoder -------------------------------------------------------

def _as_batch(img, cfg):
    img = np.asarray(img, dtype=np.float64)
    single = img.ndim == 2
    if single:
        img = img[None]
    if img.shape[-2:] != (cfg.image_height, cfg.image_width):
        raise ShapeError(f"image shape {img.shape[-2:]} does not match config "
                         f"{(cfg.image_height, cfg.image_width)}")
    return img, single


def _encode_fwd(imgs, p, cfg):
    tok = patchify(imgs, cfg.patch_size)
    X = matmul(tok, p["embed.W"]) + p["embed.b"] + p["enc.pos"]
    caches = []
    for i in range(cfg.depth):
        X, c = _block_fwd(X, p, f"enc.{i}", cfg)
        caches.append(c)
    Z, c_norm = layernorm_fwd(X, p["enc.norm.g"], p["enc.norm.b"])
    return Z, (tok, caches, c_norm)


def _decode_fwd(Z, p, cfg):
    X = Z + p["dec.pos"]
    caches = []
    for i in range(cfg.depth):
        X, c = _block_fwd(X, p, f"dec.{i}", cfg)
        caches.append(c)
    Y, c_norm = layernorm_fwd(X, p["dec.norm.g"], p["dec.norm.b"])
    out = matmul(Y, p["head.W"]) + p["head.b"]
    img = unpatchify(out, cfg.patch_size, cfg.image_height, cfg.image_width)
    return img, (caches, c_norm, Y)


def encode(img, params, cfg):
    """Encoder tokens ``(T, D)`` and latent ``(D,)`` (batched if img is 3-D)."""
    imgs, single = _as_batch(img, cfg)
    Z, _ = _encode_fwd(imgs, params, cfg)
    latent = Z.mean(axis=1)
    return (Z[0], latent[0]) if single else (Z, latent)


def decode(tokens, params, cfg):
    Z = np.asarray(tokens, dtype=np.float64)
    single = Z.ndim == 2
    if Z.shape[-2:] != (cfg.n_tokens, cfg.embed_dim):
        raise ShapeError(f"token block {Z.shape[-2:]} does not match config")
    img, _ = _decode_fwd(Z[None] if single else Z, params, cfg)
    return img[0] if single else img


def reconstruct(img, params, cfg):
    imgs, single = _as_batch(img, cfg)
    Z, _ = _encode_fwd(imgs, params, cfg)
    out, _ = _decode_fwd(Z, params, cfg)
    return out[0] if single else out


def latents(images, params, cfg, batch=256):
    """Depth latents for a stack of images, computed in chunks."""
    images = np.asarray(images)
    out = np.empty((len(images), cfg.embed_dim))
    for s in range(0, len(images), batch):
        out[s:s + batch] = encode(images[s:s + batch], params, cfg)[1]
    return out


def loss_and_grad(params, imgs, cfg):
    """Reconstruction MSE on a batch and its gradient for every parameter."""
    imgs, _ = _as_batch(imgs, cfg)
    Z, (tok, enc_caches, c_enc) = _encode_fwd(imgs, params, cfg)
    recon, (dec_caches, c_dec, Y) = _decode_fwd(Z, params, cfg)
    loss, d_img = mse(recon, imgs)
    g = {}
    d_out = patchify(d_img, cfg.patch_size)
    dY, g["head.W"], g["head.b"] = linear_bwd(d_out, Y, params["head.W"])
    dX, g["dec.norm.g"], g["dec.norm.b"] = layernorm_bwd(dY, c_dec)
    for i in reversed(range(cfg.depth)):
        dX = _block_bwd(dX, dec_caches[i], params, f"dec.{i}", cfg, g)
    g["dec.pos"] = dX.sum(0)
    dX, g["enc.norm.g"], g["enc.norm.b"] = layernorm_bwd(dX, c_enc)
    for i in reversed(range(cfg.depth)):
        dX = _block_bwd(dX, enc_caches[i], params, f"enc.{i}", cfg, g)
    g["enc.pos"] = dX.sum(0)
    _, g["embed.W"], g["embed.b"] = linear_bwd(dX, tok, params["embed.W"])
    return loss, g


# -- augmentation --------------------------------------------------------------

def apply_augment(img, angle_deg=0.0, flip=False, zoom=1.0):
    """Deterministic flip, rotation and centred zoom, clipped to [0, 1]."""
    out = np.asarray(img, dtype=np.float64)
    H, W = out.shape
    if flip:
        out = out[:, ::-1]
    if angle_deg:
        out = ndimage.rotate(out, angle_deg, reshape=False, order=1, mode="nearest")
    if zoom != 1.0:
        z = ndimage.zoom(out, zoom, order=1, mode="nearest")
        out = _fit_center(z, H, W)
    return np.clip(out, 0.0, 1.0)


def _fit_center(z, H, W):
    h, w = z.shape
    if h >= H:
        top = (h - H) // 2
        z = z[top:top + H]
    else:
        z = np.pad(z, (((H - h) // 2, H - h - (H - h) // 2), (0, 0)), mode="edge")
    if w >= W:
        left = (w - W) // 2
        z = z[:, left:left + W]
    else:
        z = np.pad(z, ((0, 0), ((W - w) // 2, W - w - (W - w) // 2)), mode="edge")
    return z


def augment(img, rng):
    """Random rotation (+-15 deg), horizontal flip (p = 0.5) and zoom (0.9 to 1.1)."""
    return apply_augment(img, rng.uniform(-15.0, 15.0), bool(rng.random() < 0.5),
                         rng.uniform(0.9, 1.1))


# -- training ----------------------------------------------------------------

def train_vit(images, cfg, hp=VitTrainConfig(), params=None, log=None):
    """Fit the autoencoder to ``images`` (N, H, W); returns ``(params, epoch_losses)``."""
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("no images to train on")
    params = params if params is not None else init_params(cfg, hp.seed)
    opt = Adam(params, hp.lr, hp.betas, weight_decay=hp.weight_decay, decoupled=True)
    rng = np.random.default_rng(hp.seed + 1)
    history = []
    for epoch in range(hp.epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for s in range(0, len(order), hp.batch_size):
            idx = order[s:s + hp.batch_size]
            batch = images[idx]
            if hp.augment:
                batch = np.stack([augment(im, rng) for im in batch])
            loss, grads = loss_and_grad(params, batch, cfg)
            if not np.isfinite(loss):
                raise DivergedError(f"ViT loss became non-finite in epoch {epoch}")
            opt.step(params, grads)
            if not all(np.isfinite(v).all() for v in params.values()):
                raise DivergedError(f"ViT parameters became non-finite in epoch {epoch}")
            total += loss * len(idx)
        history.append(total / len(order))
        if log:
            log(epoch, history[-1])
    return params, np.array(history)


# -- checkpoints ---------------------------------------------------------------

def save_vit(path, params, cfg):
    body = MAGIC + np.uint32(VERSION).astype("<u4").tobytes()
    body += pack_text(format_kv(to_kv(cfg))) + pack_tensors(dict(sorted(params.items())))
    with open(path, "wb") as fh:
        fh.write(body)


def load_vit(path, expect=None):
    with open(path, "rb") as fh:
        r = Reader(fh.read(), what=str(path))
    check_magic(r, MAGIC, VERSION)
    text = r.text()
    mapping = dict(line.split(" = ", 1) for line in text.splitlines() if line.strip())
    cfg = apply_kv(VitConfig(), mapping)
    params = unpack_tensors(r)
    r.expect_end()
    ref = init_params(cfg)
    if set(ref) != set(params) or any(ref[k].shape != params[k].shape for k in ref):
        raise CheckpointMismatch("ViT tensors do not match the echoed config")
    if expect is not None and expect != cfg:
        raise CheckpointMismatch(f"ViT checkpoint config {cfg} differs from expected {expect}")
    return params, cfg
