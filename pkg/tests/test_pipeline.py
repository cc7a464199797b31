import math

import numpy as np
import pytest
from dataclasses import replace

from optistate.config import CameraConfig, CommandConfig, NoiseParams, SimConfig
from optistate.experiment import Evaluation, evaluate, rmse, variant_name
from optistate.kalman import KalmanFilter
from optistate.nn import gru, vit
from optistate.nn.features import Normalizer
from optistate.nn.gru import GruConfig, GruTrainConfig
from optistate.nn.vit import VitConfig
from optistate.pipeline import Models, Pipeline, estimate_step, run_pipeline, trajectory_features
from optistate.sim.simulator import simulate
from optistate.sim.terrain import Terrain

VIT = VitConfig(image_height=16, image_width=16, patch_size=8, embed_dim=128, depth=1, mlp_ratio=1, n_heads=4)
CAM = CameraConfig(height=16, width=16)


@pytest.fixture(scope="module")
def trained():
    kf = KalmanFilter()
    sets = [simulate(SimConfig(duration=1.0, seed=s, camera=CAM, terrain=Terrain.preset(k)))
            for s, k in enumerate(("flat", "rough"))]
    vp = vit.init_params(VIT, 0)
    feats = [trajectory_features(ds, kf, vp, VIT) for ds in sets]
    cfg = GruConfig(hidden_size=8, n_layers=2, horizon=6)
    params, norm, _ = gru.train_gru([f for f, _ in feats], [x for _, x in feats], [ds.truth for ds in sets],
                                    cfg, GruTrainConfig(lr=1e-3, epochs=1))
    return kf, sets, feats, Models(params, norm, cfg, vp, VIT)


def test_streaming_replay_matches_batch_predictions(trained):
    kf, sets, feats, models = trained
    ds = sets[1]
    x_hat_b, est_b = run_pipeline(ds, kf, models, features=feats[1])
    pipe = Pipeline(kf, models, x0=ds.truth[0])
    for k, frame in enumerate(ds):
        x_hat, est = estimate_step(pipe, frame)
        assert np.max(np.abs(x_hat - x_hat_b[k])) < 1e-9
        assert np.max(np.abs(est.x_bar - est_b.x_bar[k])) < 1e-9
        assert np.max(np.abs(est.mu - est_b.mu[k])) < 1e-9


def test_batch_features_recompute_identically(trained):
    kf, sets, feats, models = trained
    F, x_hat = trajectory_features(sets[0], kf, models.vit_params, models.vit_cfg)
    assert np.array_equal(F, feats[0][0]) and np.array_equal(x_hat, feats[0][1])


def test_latent_is_held_between_depth_frames(trained):
    _, sets, feats, _ = trained
    F = feats[0][0]
    idx = sets[0].depth_index
    same = idx[1:] == idx[:-1]
    assert np.all(F[1:, 12:140][same] == F[:-1, 12:140][same])
    assert np.any(F[1:, 12:140][~same] != F[:-1, 12:140][~same])


def test_rmse_matches_two_pass_oracle(rng):
    est, truth = rng.normal(size=(300, 12)), rng.normal(size=(300, 12))
    expected = []
    for j in range(12):
        total = 0.0
        for i in range(300):
            total += (est[i, j] - truth[i, j]) ** 2
        expected.append(math.sqrt(total / 300))
    np.testing.assert_allclose(rmse(est, truth), expected, rtol=0, atol=1e-12)


def test_truth_against_itself_scores_zero(trained):
    kf, sets, feats, models = trained
    ds = sets[0]
    assert np.all(rmse(ds.truth, ds.truth) == 0)
    ev = evaluate({"flat": ds}, [(feats[0][0], ds.truth)], {}, kf)
    assert ev.mean_rmse("kf_only") == 0.0


def test_evaluation_improvement_bookkeeping():
    ev = Evaluation({"kf_only": np.full((2, 12), 2.0), "optistate": np.full((2, 12), 1.5)}, ("a", "b"))
    assert ev.improvement("optistate") == pytest.approx(0.25)
    np.testing.assert_allclose(ev.component_improvement("optistate"), 25.0)


def test_variant_names():
    assert variant_name(GruConfig()) == "optistate"
    assert variant_name(GruConfig(ablate_kf=True)) == "no_kf_input"
    assert variant_name(GruConfig(ablate_vision=True)) == "no_vision"


def test_kf_position_error_small_on_clean_flat_ground():
    cfg = SimConfig(duration=6.0, seed=2, render_depth=False,
                    noise=replace(NoiseParams(), mocap=0.0))
    ds = simulate(cfg)
    x = KalmanFilter().run(ds)
    err = rmse(x, ds.truth)
    # height is measured; horizontal position drifts only through velocity noise
    assert err[5] < 0.01
    assert max(err[3], err[4]) < 0.05


def test_evaluate_pools_mu_correlation(trained):
    kf, sets, feats, models = trained
    ev = evaluate({"flat": sets[0], "rough": sets[1]}, feats, {"optistate": models}, kf)
    assert set(ev.rmse) == {"kf_only", "optistate"}
    assert ev.rmse["optistate"].shape == (2, 12)
    assert -1.0 <= ev.mu_spearman <= 1.0
