"""Derivative engine: forward values, input Jacobian/Hessian bundles,
parameter gradients of recorded scalars, optimiser and schedule."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refpinn import net
from refpinn.errors import DivergenceError, ShapeError


def fd_jac_hess(mlp, x, h=1e-4):
    jac_cols, hess_diag = [], []
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        fp, fm = net.forward(mlp, x + e), net.forward(mlp, x - e)
        f0 = net.forward(mlp, x)
        jac_cols.append((fp - fm) / (2 * h))
        hess_diag.append((fp - 2 * f0 + fm) / h ** 2)
    return np.stack(jac_cols, axis=-1), np.stack(hess_diag, axis=-1)


def test_forward_identity_layer():
    m = net.Mlp([2, 2], [np.eye(2)], [np.zeros(2)], "identity")
    out = net.forward(m, np.array([0.3, -0.2]))
    assert np.allclose(out, [0.3, -0.2])


def test_forward_zero_weight_tanh():
    m = net.Mlp([2, 1], [np.zeros((1, 2))], [np.zeros(1)], "tanh")
    # single-layer output stays linear, so this is W x + b = 0
    assert net.forward(m, np.array([3.0, -7.0]))[0] == 0.0


def test_forward_affine_scalar():
    m = net.Mlp([1, 1], [np.array([[2.0]])], [np.array([1.0])], "identity")
    assert net.forward(m, np.array([0.5]))[0] == pytest.approx(2.0)


def test_forward_shape_error():
    m = net.init_mlp([2, 4, 1])
    with pytest.raises(ShapeError):
        net.forward(m, np.zeros(3))


def test_bundle_linear_layer():
    w = np.array([[1.5, -0.5], [0.25, 2.0]])
    m = net.Mlp([2, 2], [w], [np.array([0.1, -0.2])], "identity")
    b = net.forward_bundle(m, np.array([[0.3, 0.7], [-1.0, 0.4]]))
    assert np.allclose(b.jacobian, np.broadcast_to(w, (2, 2, 2)))
    assert np.allclose(b.hessian, 0.0)


def test_bundle_tanh_at_zero_preactivation():
    # tanh'(0) = 1 and tanh''(0) = 0
    w = np.array([[1.0, 0.0]])
    m = net.Mlp([2, 1, 1], [w, np.array([[1.0]])], [np.zeros(1), np.zeros(1)], "tanh")
    b = net.forward_bundle(m, np.array([[0.0, 0.0]]))
    assert b.jacobian[0, 0, 0] == pytest.approx(1.0)
    assert np.allclose(b.hessian, 0.0, atol=1e-14)


@pytest.mark.parametrize("activation", ["tanh", "silu"])
def test_bundle_matches_finite_differences(activation):
    rng = np.random.default_rng(11)
    m = net.init_mlp([2, 8, 8, 1], activation, seed=4)
    x = rng.normal(size=(20, 2))
    b = net.forward_bundle(m, x)
    jac_fd, hess_fd = fd_jac_hess(m, x)
    scale = max(np.abs(jac_fd).max(), 1.0)
    assert np.abs(b.jacobian - jac_fd).max() / scale < 1e-5
    hscale = max(np.abs(hess_fd).max(), 1.0)
    for j in range(2):
        assert np.abs(b.hessian[:, :, j, j] - hess_fd[:, :, j]).max() / hscale < 1e-5


def test_bundle_hessian_symmetric():
    m = net.init_mlp([2, 16, 16, 3], "silu", seed=9)
    x = np.random.default_rng(0).normal(size=(30, 2))
    b = net.forward_bundle(m, x)
    assert np.abs(b.hessian - b.hessian.transpose(0, 1, 3, 2)).max() < 1e-10


def test_fused_graph_matches_generic():
    rng = np.random.default_rng(2)
    for dims in ([2, 8, 1], [2, 8, 8, 2], [3, 6, 6, 6, 1]):
        m = net.init_mlp(dims, "tanh", seed=1)
        x = rng.normal(size=(9, dims[0]))
        bg = net.bundle_graph(net.param_nodes(m), "tanh", x)
        bf = net.bundle_graph_fused(net.param_nodes(m), "tanh", x)
        assert np.abs(net.value_of(bg.hessian) - net.value_of(bf.hessian)).max() < 1e-13
        assert np.abs(net.value_of(bg.jacobian) - net.value_of(bf.jacobian)).max() < 1e-13


def test_backprop_constant_loss_zero_grads():
    m = net.init_mlp([2, 4, 1], seed=0)
    params = net.param_nodes(m)
    loss = net.Node(np.asarray(0.0))
    grads = net.backprop_scalar(loss, params)
    assert all(np.all(g == 0) for g in grads)


def test_backprop_hand_derivative_1x1():
    # loss = (w x + b)^2 at x = 1: dL/dw = 2 (w + b), dL/db = 2 (w + b)
    m = net.Mlp([1, 1], [np.array([[1.7]])], [np.array([0.3])], "identity")
    params = net.param_nodes(m)
    out = net.forward_graph(params, "identity", np.array([[1.0]]))
    loss = net.nsum(net.mul(out, out))
    grads = net.backprop_scalar(loss, params)
    assert grads[0][0, 0] == pytest.approx(2 * (1.7 + 0.3))
    assert grads[1][0] == pytest.approx(2 * (1.7 + 0.3))


@pytest.mark.parametrize("activation", ["tanh", "silu"])
def test_backprop_through_hessian_matches_fd(activation):
    rng = np.random.default_rng(7)
    m = net.init_mlp([1, 6, 1], activation, seed=5)
    x = rng.normal(size=(8, 1))
    params = net.param_nodes(m)
    b = net.bundle_graph_fused(params, activation, x)
    loss = net.nmean(net.mul(b.hessian, b.hessian))
    grads = net.backprop_scalar(loss, params)

    def loss_at(mm):
        bb = net.forward_bundle(mm, x)
        return float(np.mean(bb.hessian ** 2))

    eps = 1e-6
    mm = net.init_mlp([1, 6, 1], activation, seed=5)
    mm.weights[0][2, 0] += eps
    lp = loss_at(mm)
    mm.weights[0][2, 0] -= 2 * eps
    lm = loss_at(mm)
    fd = (lp - lm) / (2 * eps)
    assert grads[0][2, 0] == pytest.approx(fd, rel=1e-4)


def test_backprop_disconnected_scalar_warns(caplog):
    m = net.init_mlp([2, 3, 1], seed=0)
    params = net.param_nodes(m)
    loss = net.nsum(net.mul(net.Node(np.ones(3)), net.Node(np.ones(3))))
    with caplog.at_level("WARNING"):
        grads = net.backprop_scalar(loss, params)
    assert all(np.all(g == 0) for g in grads)
    assert any("not connected" in r.message for r in caplog.records)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), width=st.integers(2, 12),
       activation=st.sampled_from(["tanh", "silu"]))
def test_property_bundle_fd_agreement(seed, width, activation):
    rng = np.random.default_rng(seed)
    m = net.init_mlp([2, width, 1], activation, seed=seed)
    x = rng.uniform(-1, 1, size=(5, 2))
    b = net.forward_bundle(m, x)
    jac_fd, _ = fd_jac_hess(m, x)
    scale = max(np.abs(jac_fd).max(), 1e-3)
    assert np.abs(b.jacobian - jac_fd).max() / scale < 1e-5


def test_adam_step_moves_against_gradient():
    params = [np.array([1.0, -2.0])]
    grads = [np.array([0.5, -0.5])]
    state = net.AdamState.for_params(params)
    out = net.adam_step(params, grads, state, lr=0.1)
    assert out[0][0] < 1.0 and out[0][1] > -2.0


def test_adam_nonfinite_gradients_abort():
    params = [np.zeros(2)]
    state = net.AdamState.for_params(params)
    with pytest.raises(DivergenceError):
        net.adam_step(params, [np.array([np.nan, 0.0])], state, lr=0.1)


def test_cosine_schedule_endpoints_and_midpoint():
    assert net.cosine_lr(0, 1000, 1e-3, 1e-5) == pytest.approx(1e-3)
    assert net.cosine_lr(1000, 1000, 1e-3, 1e-5) == pytest.approx(1e-5)
    assert net.cosine_lr(500, 1000, 1e-3, 1e-5) == pytest.approx(5.05e-4)


def test_checkpoint_roundtrip(tmp_path):
    m = net.init_mlp([2, 16, 2], "tanh", seed=3)
    path = tmp_path / "model.bin"
    net.save_mlp(path, m)
    m2 = net.load_mlp(path)
    assert m2.layer_dims == m.layer_dims
    assert m2.activation == m.activation
    assert m2.seed == m.seed
    for a, b in zip(m.weights + m.biases, m2.weights + m2.biases):
        assert np.array_equal(a, b)
    x = np.random.default_rng(1).normal(size=(4, 2))
    assert np.array_equal(net.forward(m, x), net.forward(m2, x))


def test_deterministic_init():
    a = net.init_mlp([2, 32, 1], "silu", seed=42)
    b = net.init_mlp([2, 32, 1], "silu", seed=42)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
