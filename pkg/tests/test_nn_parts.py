import numpy as np
import pytest

from conftest import max_rel_error, numeric_grad
from optistate.nn import layers
from optistate.nn.optim import Adam, lr_at


def test_layer_backward_passes_match_finite_differences(rng):
    x = rng.normal(size=(3, 5))
    W, b = rng.normal(size=(5, 4)), rng.normal(size=4)
    g, beta = rng.normal(size=5), rng.normal(size=5)
    up4, up5 = rng.normal(size=(3, 4)), rng.normal(size=(3, 5))

    def loss(p):
        y, _ = layers.linear_fwd(p["x"], p["W"], p["b"])
        ln, _ = layers.layernorm_fwd(p["x"], p["g"], p["beta"])
        ge, _ = layers.gelu_fwd(p["x"])
        sm = layers.softmax(p["x"])
        return float(np.sum(y * up4) + np.sum(ln * up5) + np.sum(ge * up5) + np.sum(sm * up5))

    p = {"x": x, "W": W, "b": b, "g": g, "beta": beta}
    _, xc = layers.linear_fwd(x, W, b)
    dx1, dW, db = layers.linear_bwd(up4, xc, W)
    _, cln = layers.layernorm_fwd(x, g, beta)
    dx2, dg, dbeta = layers.layernorm_bwd(up5, cln)
    _, cge = layers.gelu_fwd(x)
    dx3 = layers.gelu_bwd(up5, cge)
    dx4 = layers.softmax_bwd(up5, layers.softmax(x))
    analytic = {"x": dx1 + dx2 + dx3 + dx4, "W": dW, "b": db, "g": dg, "beta": dbeta}
    err = max_rel_error(analytic, numeric_grad(loss, p))
    assert max(err.values()) < 1e-6, err


def test_matmul_flattens_leading_axes(rng):
    x, W = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_allclose(layers.matmul(x, W), np.einsum("abi,ij->abj", x, W), atol=1e-12)


def test_softplus_is_smooth_and_positive():
    x = np.array([-800.0, -5.0, 0.0, 5.0, 800.0])
    y = layers.softplus(x)
    assert np.all(y >= 0) and y[2] == pytest.approx(np.log(2)) and y[-1] == 800.0


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([[1.0, -2.0]]), "b": np.array([0.5])}
    opt = Adam(p, lr=0.1)
    opt.step(p, {"w": np.array([[3.0, -0.01]]), "b": np.array([-7.0])})
    np.testing.assert_allclose(p["w"], [[0.9, -1.9]], atol=1e-6)
    np.testing.assert_allclose(p["b"], [0.6], atol=1e-6)


def test_adamw_decays_matrices_only():
    p = {"w": np.ones((2, 2)), "b": np.ones(2)}
    opt = Adam(p, lr=0.1, weight_decay=0.5, decoupled=True)
    opt.step(p, {"w": np.zeros((2, 2)), "b": np.zeros(2)})
    np.testing.assert_allclose(p["w"], 0.95)
    np.testing.assert_allclose(p["b"], 1.0)


def test_coupled_decay_enters_the_gradient():
    p = {"b": np.array([2.0])}
    opt = Adam(p, lr=0.1, weight_decay=0.5)
    opt.step(p, {"b": np.array([0.0])})
    assert p["b"][0] == pytest.approx(1.9, abs=1e-6)


def test_adam_minimizes_a_quadratic():
    p = {"x": np.array([3.0, -4.0])}
    opt = Adam(p, lr=0.05)
    for _ in range(2000):
        opt.step(p, {"x": 2 * p["x"]})
    assert np.max(np.abs(p["x"])) < 1e-2
    assert opt.state()["t"][0] == 2000


def test_cosine_schedule():
    assert lr_at(1.0, 0, 100, "cosine") == 1.0
    assert lr_at(1.0, 50, 100, "cosine") == pytest.approx(0.5)
    assert lr_at(1.0, 100, 100, "cosine") == pytest.approx(0.0)
    assert lr_at(0.3, 77, 100) == 0.3
    with pytest.raises(ValueError):
        lr_at(1.0, 0, 10, "step")
