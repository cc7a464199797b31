"""End-to-end training and evaluation on a simulated suite.

The held-out comparison trains the full model and two ablations (no KF
input, no vision input) on the same training trajectories and scores each
against the KF alone on one unseen trajectory per terrain.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from .kalman import KalmanFilter
from .nn import gru as gru_mod
from .nn import vit as vit_mod
from .pipeline import Models, filter_with_odometry, run_pipeline, trajectory_features
from .sim.simulator import simulate
from .sim.terrain import KINDS
from .profiles import suite

BASELINE = "kf_only"
VARIANTS = ("optistate", "no_kf_input", "no_vision")
ABLATIONS = {"optistate": (False, False), "no_kf_input": (True, False), "no_vision": (False, True)}


def variant_name(cfg):
    """Variant label for a GRU config, from its ablation flags."""
    flags = (cfg.ablate_kf, cfg.ablate_vision)
    for name, ab in ABLATIONS.items():
        if ab == flags:
            return name
    return "no_kf_no_vision"


def simulate_suite(profile, seed=0, base=None, log=None):
    out = {}
    for name, cfg in suite(profile, seed, base):
        out[name] = simulate(cfg)
        if log:
            log(f"simulated {name}: {len(out[name])} frames")
    return out


def split_suite(datasets):
    train = [ds for name, ds in datasets.items() if name.startswith("train_")]
    test = {kind: datasets[f"test_{kind}"] for kind in KINDS if f"test_{kind}" in datasets}
    return train, test


def vit_corpus(train_sets, n_images, seed=0):
    """Up to ``n_images`` distinct depth images drawn from the training sets."""
    images = np.concatenate([ds.depth for ds in train_sets if ds.depth.shape[0]])
    rng = np.random.default_rng(seed)
    take = np.sort(rng.choice(len(images), size=min(n_images, len(images)), replace=False))
    return images[take].astype(np.float64)


def train_vit_stage(train_sets, profile, log=None):
    images = vit_corpus(train_sets, profile.vit_images, profile.vit_train.seed)
    return vit_mod.train_vit(images, profile.vit, profile.vit_train, log=log)


def kalman_outputs(datasets, kf):
    """Filter output per dataset name; it does not depend on the training seed."""
    return {name: filter_with_odometry(ds, kf) for name, ds in datasets.items()}


def compute_features(datasets, kf, vit_params, vit_cfg, kf_outs=None):
    kf_outs = kf_outs or [None] * len(datasets)
    return [trajectory_features(ds, kf, vit_params, vit_cfg, kf_out=o) for ds, o in zip(datasets, kf_outs)]


def train_gru_stage(train_feats, train_sets, profile, ablate_kf=False, ablate_vision=False,
                    vit_params=None, log=None):
    cfg = replace(profile.gru, ablate_kf=ablate_kf, ablate_vision=ablate_vision)
    params, norm, history = gru_mod.train_gru(
        [f for f, _ in train_feats], [x for _, x in train_feats], [ds.truth for ds in train_sets],
        cfg, profile.gru_train, log=log)
    models = Models(params, norm, cfg, None if ablate_vision else vit_params,
                    None if ablate_vision else profile.vit)
    return models, history


def rmse(est, truth):
    """Per-component root-mean-square error over frames."""
    d = np.asarray(est) - np.asarray(truth)
    return np.sqrt(np.mean(d * d, axis=0))


@dataclass
class Evaluation:
    """RMSE per variant and terrain, plus the pooled uncertainty statistic."""
    rmse: dict                       # variant -> (n_terrains, 12)
    terrains: tuple
    estimates: dict = field(default_factory=dict)   # (variant, terrain) -> (x, mu or None)
    mu_spearman: float = float("nan")

    def mean_rmse(self, variant):
        return float(self.rmse[variant].mean())

    def improvement(self, variant, baseline=BASELINE):
        """Relative drop in mean per-component RMSE against ``baseline``."""
        return 1.0 - self.mean_rmse(variant) / self.mean_rmse(baseline)

    def component_improvement(self, variant, baseline=BASELINE):
        """Percent improvement per terrain and component."""
        return 100.0 * (1.0 - self.rmse[variant] / self.rmse[baseline])


def evaluate(test_sets, test_feats, models_by_variant, kf):
    terrains = tuple(test_sets)
    table = {BASELINE: np.stack([rmse(x_hat, test_sets[t].truth) for t, (_, x_hat) in zip(terrains, test_feats)])}
    estimates = {(BASELINE, t): (x_hat, None) for t, (_, x_hat) in zip(terrains, test_feats)}
    mus, errs = [], []
    for variant, models in models_by_variant.items():
        rows = []
        for t, feats in zip(terrains, test_feats):
            _, est = run_pipeline(test_sets[t], kf, models, features=feats)
            rows.append(rmse(est.x_bar, test_sets[t].truth))
            estimates[(variant, t)] = (est.x_bar, est.mu)
            if variant == "optistate":
                mus.append(est.mu.reshape(-1))
                errs.append(np.abs(est.x_bar - test_sets[t].truth).reshape(-1))
        table[variant] = np.stack(rows)
    rho = float("nan")
    if mus:
        rho = float(spearmanr(np.concatenate(mus), np.concatenate(errs)).statistic)
    return Evaluation(table, terrains, estimates, rho)


def run_experiment(profile, datasets, seed=0, variants=VARIANTS, log=None, kf_outs=None):
    """Train every variant with training seed ``seed`` and evaluate on the test sets.

    ``kf_outs`` (from :func:`kalman_outputs`) lets several seeds share one
    filtering pass.
    """
    profile = profile.with_seed(seed)
    kf = KalmanFilter(dt=next(iter(datasets.values())).dt)
    kf_outs = kf_outs if kf_outs is not None else kalman_outputs(datasets, kf)
    train_sets, test_sets = split_suite(datasets)
    train_names = [name for name in datasets if name.startswith("train_")]
    vit_params, vit_hist = train_vit_stage(train_sets, profile, log=log)
    train_feats = compute_features(train_sets, kf, vit_params, profile.vit,
                                   [kf_outs[n] for n in train_names])
    test_feats = compute_features(list(test_sets.values()), kf, vit_params, profile.vit,
                                  [kf_outs[f"test_{t}"] for t in test_sets])
    models, histories = {}, {"vit": vit_hist}
    for variant in variants:
        ablate_kf, ablate_vision = ABLATIONS[variant]
        models[variant], histories[variant] = train_gru_stage(
            train_feats, train_sets, profile, ablate_kf, ablate_vision, vit_params, log=log)
    ev = evaluate(test_sets, test_feats, models, kf)
    return ev, models, histories
