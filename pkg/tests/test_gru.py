import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import max_rel_error, numeric_grad
from optistate.errors import CheckpointMismatch, MissingTruth, ShapeError
from optistate.nn import gru
from optistate.nn.features import (COLUMNS, INPUT_DIM, Normalizer, ablation_mask, build_input_window,
                                   frame_features, stack_features, window_indices)
from optistate.nn.gru import GruConfig, GruTrainConfig
from optistate.nn.layers import sigmoid

MICRO = GruConfig(input_dim=3, hidden_size=4, n_layers=2, horizon=4)


def randomized(cfg, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return {k: v + scale * rng.standard_normal(v.shape) for k, v in gru.init_params(cfg, seed).items()}


def unit_normalizer(d_in=INPUT_DIM):
    return Normalizer(np.zeros(d_in), np.ones(d_in), np.zeros(12), np.ones(12))


# -- features and windows ------------------------------------------------------------

def test_feature_columns_land_in_documented_ranges():
    parts = [np.full(n, float(i + 1)) for i, n in enumerate((12, 128, 12, 12, 3, 3, 12))]
    row = frame_features(*parts)
    assert INPUT_DIM == 182
    bounds = [(0, 12), (12, 140), (140, 152), (152, 164), (164, 167), (167, 170), (170, 182)]
    for i, (lo, hi) in enumerate(bounds):
        assert np.all(row[lo:hi] == i + 1)
    assert COLUMNS["latent"] == slice(12, 140)
    stacked = stack_features(*[np.tile(p, (5, 1)) for p in parts])
    assert np.array_equal(stacked, np.tile(row, (5, 1)))


def test_wrong_feature_width_is_a_shape_error():
    parts = [np.zeros(n) for n in (12, 128, 12, 12, 3, 3, 12)]
    parts[1] = np.zeros(64)
    with pytest.raises(ShapeError):
        frame_features(*parts)
    with pytest.raises(ShapeError):
        build_input_window([np.zeros(10)], 10)


def test_constant_history_gives_identical_rows():
    W = build_input_window([np.full(INPUT_DIM, 0.7)] * 3, 10)
    assert W.shape == (10, INPUT_DIM) and np.all(W == 0.7)


def test_short_history_repeats_the_oldest_frame():
    hist = [np.full(INPUT_DIM, float(i)) for i in range(3)]
    W = build_input_window(hist, 5)
    np.testing.assert_array_equal(W[:, 0], [0, 0, 0, 1, 2])
    np.testing.assert_array_equal(window_indices(3, 5)[-1], [0, 0, 0, 1, 2])
    np.testing.assert_array_equal(window_indices(12, 4)[-1], [8, 9, 10, 11])


def test_normalizer_maps_training_extremes_to_unit_interval(rng):
    X = rng.normal(size=(50, 6))
    X[:, 2] = 4.0
    Y = rng.normal(size=(50, 12))
    n = Normalizer.fit(X, Y)
    Xn = n.norm_in(X)
    assert np.all(Xn.min(0)[[0, 1, 3, 4, 5]] == 0.0) and np.all(Xn.max(0)[[0, 1, 3, 4, 5]] == 1.0)
    assert np.all(Xn[:, 2] == 0.0)
    np.testing.assert_allclose(n.denorm_out(n.norm_out(Y)), Y, rtol=0, atol=1e-12)


@given(arrays(np.float64, 12, elements=st.floats(0, 1)))
def test_denormalize_inverts_normalize(u):
    n = Normalizer(np.zeros(3), np.ones(3), np.linspace(-2, 0, 12), np.linspace(-1, 5, 12))
    y = n.denorm_out(u)
    np.testing.assert_allclose(n.norm_out(y), u, rtol=0, atol=1e-12)


def test_ablation_masks_select_the_right_columns():
    assert not ablation_mask().any()
    assert np.flatnonzero(ablation_mask(ablate_kf=True)).tolist() == list(range(12))
    assert np.flatnonzero(ablation_mask(ablate_vision=True)).tolist() == list(range(12, 140))


# -- recurrence ------------------------------------------------------------------

def test_zero_parameters_output_the_normalized_zero():
    cfg = GruConfig()
    n = Normalizer(np.zeros(INPUT_DIM), np.ones(INPUT_DIM), np.full(12, -1.0), np.full(12, 3.0))
    x_hat = np.arange(12.0)
    window = np.random.default_rng(0).random((10, INPUT_DIM))
    window[-1, :12] = x_hat
    est = gru.gru_forward(window, gru.zero_params(cfg), n, cfg)
    np.testing.assert_allclose(est.x_bar, x_hat + n.denorm_out(np.zeros(12)))
    np.testing.assert_allclose(est.mu, np.log(2.0) * 4.0)
    no_kf = replace(cfg, ablate_kf=True)
    est = gru.gru_forward(window, gru.zero_params(no_kf), n, no_kf)
    np.testing.assert_allclose(est.x_bar, -1.0)


def test_scalar_cell_matches_hand_recurrence():
    cfg = GruConfig(input_dim=1, hidden_size=1, n_layers=1, horizon=3)
    Wz, Wr, Wn, Uz, Ur, Un, bz, br, bn = 0.7, -0.4, 1.3, 0.5, 0.9, -0.8, 0.1, -0.2, 0.3
    p = {"l0.W": np.array([[Wz, Wr, Wn]]), "l0.U": np.array([[Uz, Ur, Un]]),
         "l0.b": np.array([bz, br, bn]), "head.W": np.zeros((1, 24)), "head.b": np.zeros(24)}
    p["head.W"][0, 0] = 1.0
    xs = [0.5, -1.2, 2.0]
    h = 0.0
    for x in xs:
        z = 1 / (1 + np.exp(-(Wz * x + Uz * h + bz)))
        r = 1 / (1 + np.exp(-(Wr * x + Ur * h + br)))
        n = np.tanh(Wn * x + Un * (r * h) + bn)
        h = (1 - z) * n + z * h
    raw, _ = gru.forward_raw(p, np.array(xs).reshape(1, 3, 1), cfg)
    assert abs(raw[0, 0] - h) < 1e-12


def test_only_the_last_horizon_frames_matter(rng):
    cfg = replace(GruConfig(hidden_size=16, n_layers=2), horizon=10)
    p = randomized(cfg, 1, scale=0.1)
    n = unit_normalizer()
    W = rng.random((15, INPUT_DIM))
    a = gru.gru_forward(W, p, n, cfg)
    W2 = W.copy()
    W2[:5] = rng.random((5, INPUT_DIM))          # everything before frame k - N + 1
    b = gru.gru_forward(W2, p, n, cfg)
    np.testing.assert_array_equal(a.x_bar, b.x_bar)
    W2[5] += 1.0                                 # oldest frame inside the window
    assert not np.array_equal(gru.gru_forward(W2, p, n, cfg).x_bar, a.x_bar)


def test_gates_and_hidden_states_stay_bounded(rng):
    cfg = GruConfig(input_dim=5, hidden_size=8, n_layers=3, horizon=6)
    # moderate scale: saturating inputs round the gates to exactly 0 or 1 in float64
    p = randomized(cfg, 4, scale=0.5)
    X = rng.normal(0, 1, (32, 6, 5))
    _, (caches, h_top) = gru.forward_raw(p, X, cfg)
    for _, steps in caches:
        for z, r, n, h_prev, _ in steps:
            assert np.all((z > 0) & (z < 1) & (r > 0) & (r < 1))
            assert np.all(np.abs(n) < 1)
    assert np.all(np.abs(h_top) < 1)


@given(arrays(np.float64, (3, 4, 3), elements=st.floats(-1e3, 1e3)))
def test_mu_is_never_negative(X):
    raw, _ = gru.forward_raw(randomized(MICRO, 0, scale=5.0), X, MICRO)
    assert np.all(gru.split_output(raw)[1] >= 0)


def test_sigmoid_is_stable_at_extremes():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_bad_window_is_a_shape_error():
    cfg = GruConfig()
    with pytest.raises(ShapeError):
        gru.gru_forward(np.zeros((5, INPUT_DIM)), gru.zero_params(cfg), unit_normalizer(), cfg)
    with pytest.raises(ShapeError):
        gru.forward_raw(gru.zero_params(cfg), np.zeros((1, 10, 7)), cfg)


# -- gradients and training --------------------------------------------------------

def test_micro_gradients_match_finite_differences(rng):
    p = randomized(MICRO, 7)
    X = rng.random((5, 4, 3))
    T = rng.random((5, 12))
    mu_t = rng.random((5, 12))
    _, g = gru.loss_and_grad(p, X, T, MICRO, mu_target=mu_t)
    num = numeric_grad(lambda q: gru.loss_and_grad(q, X, T, MICRO, mu_target=mu_t)[0], p)
    err = max_rel_error(g, num)
    assert set(err) == set(p)
    assert max(err.values()) < 1e-4, err


def synthetic_trajectories(rng, n_traj=3, n=120):
    feats, xh, truth = [], [], []
    for _ in range(n_traj):
        F = rng.normal(size=(n, INPUT_DIM))
        x = np.cumsum(rng.normal(0, 0.01, (n, 12)), axis=0)
        feats.append(F)
        xh.append(x)
        truth.append(x + 0.1 * np.tanh(F[:, 170:182]))
    return feats, xh, truth


def test_training_lowers_loss_and_predict_matches_single_windows(rng):
    cfg = GruConfig(hidden_size=16, n_layers=1, horizon=5)
    feats, xh, truth = synthetic_trajectories(rng)
    for f, x in zip(feats, xh):
        f[:, :12] = x
    hp = GruTrainConfig(lr=3e-3, epochs=8, batch_size=32)
    p, norm, hist = gru.train_gru(feats, xh, truth, cfg, hp)
    assert hist[-1] < 0.5 * hist[0]
    est = gru.predict(p, norm, cfg, feats[0], xh[0])
    for k in (0, 3, 50, 119):
        one = gru.gru_forward(build_input_window(list(feats[0][:k + 1]), cfg.horizon), p, norm, cfg)
        np.testing.assert_allclose(one.x_bar, est.x_bar[k], rtol=0, atol=1e-12)
        np.testing.assert_allclose(one.mu, est.mu[k], rtol=0, atol=1e-12)


def test_shuffle_seed_changes_trace_not_outcome(rng):
    cfg = GruConfig(hidden_size=16, n_layers=1, horizon=5)
    feats, xh, truth = synthetic_trajectories(rng, n_traj=4)
    test_f, test_x, test_t = synthetic_trajectories(np.random.default_rng(99), n_traj=1)
    results = []
    for seed in (0, 1):
        hp = GruTrainConfig(lr=3e-3, epochs=10, batch_size=32, seed=seed)
        p, norm, hist = gru.train_gru(feats, xh, truth, cfg, hp)
        est = gru.predict(p, norm, cfg, test_f[0], test_x[0])
        results.append((hist, np.sqrt(np.mean((est.x_bar - test_t[0]) ** 2))))
    (h0, r0), (h1, r1) = results
    assert not np.array_equal(h0, h1)
    assert abs(r0 - r1) / max(r0, r1) < 0.1


def test_missing_truth_is_rejected(rng):
    feats, xh, truth = synthetic_trajectories(rng, n_traj=1, n=20)
    truth[0][4, 2] = np.nan
    with pytest.raises(MissingTruth):
        gru.train_gru(feats, xh, truth, GruConfig(hidden_size=4, n_layers=1))


def test_ablated_columns_are_zeroed_in_training_and_inference(rng):
    cfg = GruConfig(hidden_size=8, n_layers=1, horizon=3, ablate_vision=True)
    feats, xh, truth = synthetic_trajectories(rng, n_traj=1, n=30)
    windows, norm = gru.prepare_training(feats, xh, truth, cfg)
    X, _ = windows.batch(np.arange(len(windows)))
    assert np.all(X[..., 12:140] == 0)
    p = randomized(cfg, 0)
    noisy = feats[0].copy()
    noisy[:, 12:140] += 5.0
    a = gru.predict(p, norm, cfg, feats[0], xh[0])
    b = gru.predict(p, norm, cfg, noisy, xh[0])
    np.testing.assert_array_equal(a.x_bar, b.x_bar)


def test_checkpoint_roundtrip(tmp_path, rng):
    cfg = GruConfig(hidden_size=8, n_layers=2)
    p = randomized(cfg, 3)
    norm = Normalizer(rng.random(INPUT_DIM), 1 + rng.random(INPUT_DIM), -rng.random(12), rng.random(12))
    path = tmp_path / "g.osgr"
    gru.save_gru(path, p, norm, cfg)
    q, n2, cfg2 = gru.load_gru(path, expect=cfg)
    assert cfg2 == cfg
    assert all(np.array_equal(p[k], q[k]) for k in p)
    assert np.array_equal(n2.in_max, norm.in_max) and np.array_equal(n2.out_min, norm.out_min)
    with pytest.raises(CheckpointMismatch):
        gru.load_gru(path, expect=replace(cfg, hidden_size=16))
