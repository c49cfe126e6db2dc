import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grelu.errors import DimensionError, InputError
from grelu.linalg import spectral_norm
from grelu.model import (GatePattern, NetworkShape, ReluNetwork, Subnetworks, compute_gates,
                         effective_matrix, forward, init_network, intermediate_Z,
                         intermediate_Z_operator, relu_forward, relu_to_grelu,
                         subnetwork_F, subnetwork_G)

from conftest import make_instance


def straight_line_output(net, x):
    # gates and products written out one matrix at a time
    L = net.shape.L
    z = np.maximum(net.C @ x, 0)
    D = [np.diag((z > 0).astype(float))]
    for P in net.Psi:
        z = np.maximum(P @ z, 0)
        D.append(np.diag((z > 0).astype(float)))
    M = D[0] @ net.C
    for k in range(1, L + 1):
        M = D[k] @ net.W[k - 1] @ M
    return net.B @ M @ x


def straight_line_relu(relu, x):
    z = relu.C @ x
    for W in relu.W:
        z = W @ np.maximum(z, 0)
    last = np.maximum(z, 0) if relu.output_relu else z
    return relu.B @ last


def unit(v):
    return v / np.linalg.norm(v)


def test_shape_validation():
    with pytest.raises(ValueError):
        NetworkShape(3, 1, 4, 0)
    with pytest.raises(ValueError):
        NetworkShape(0, 1, 4, 1)


def test_init_deterministic():
    s = NetworkShape(5, 2, 7, 3)
    a, b = init_network(s, 42), init_network(s, 42)
    for u, v in zip((a.C, a.B) + a.Psi + a.W, (b.C, b.B) + b.Psi + b.W):
        assert u.tobytes() == v.tobytes()
    c = init_network(s, 43)
    assert not np.array_equal(a.W[0], c.W[0])
    # trained and frozen layers use separate streams
    assert not np.array_equal(a.W[0], a.Psi[0])


def test_init_frozen_parts_read_only():
    net = init_network(NetworkShape(3, 1, 4, 2), 0)
    with pytest.raises(ValueError):
        net.W[0][0, 0] = 1.0


def test_init_variances():
    net = init_network(NetworkShape(200, 1, 4096, 1), 1)
    assert net.W[0].var() == pytest.approx(2 / 4096, rel=0.02)
    assert net.Psi[0].var() == pytest.approx(2 / 4096, rel=0.02)
    assert net.C.var() == pytest.approx(2 / 200, rel=0.02)


def test_zero_input_closes_everything():
    net = init_network(NetworkShape(4, 2, 6, 2), 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = compute_gates(net, np.zeros(4))
    assert not g.masks.any()
    out, hidden = forward(net, g, np.zeros(4))
    assert np.all(out == 0) and all(np.all(h == 0) for h in hidden)


def test_gates_warn_and_reject():
    net = init_network(NetworkShape(4, 1, 6, 2), 0)
    with pytest.warns(UserWarning):
        compute_gates(net, np.ones(4))
    with pytest.raises(InputError):
        compute_gates(net, np.array([1.0, np.nan, 0, 0]))
    with pytest.raises(DimensionError):
        compute_gates(net, np.ones(5))


def test_open_fraction_near_half():
    net = init_network(NetworkShape(8, 1, 2048, 2), 3)
    X = np.random.default_rng(0).standard_normal((50, 8))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    frac = compute_gates(net, X).masks[:, 1].mean()
    assert abs(frac - 0.5) < 0.05


def test_gates_ignore_trained_weights():
    net, g, ds = make_instance(n=5, m=10, L=3)
    moved = net.with_weights([w + np.random.default_rng(k).standard_normal(w.shape)
                              for k, w in enumerate(net.W)])
    assert compute_gates(moved, ds.X) == g


def test_gate_pattern_packing_roundtrip():
    masks = np.random.default_rng(0).random((3, 4, 13)) > 0.5
    g = GatePattern.from_masks(masks)
    assert g.bits.shape == (3, 4, 2)
    np.testing.assert_array_equal(g.masks, masks)
    assert g.n == 3 and g.depth == 3
    np.testing.assert_array_equal(g.example(1).masks[0], masks[1])


@pytest.mark.parametrize("seed", range(3))
def test_forward_matches_straight_line(seed):
    net = init_network(NetworkShape(4, 2, 6, 2), seed)
    x = unit(np.random.default_rng(seed).standard_normal(4))
    out, _ = forward(net, compute_gates(net, x), x)
    np.testing.assert_allclose(out, straight_line_output(net, x), rtol=1e-12, atol=1e-14)


def test_forward_equals_effective_matrix():
    net = init_network(NetworkShape(5, 3, 9, 3), 2)
    X = np.random.default_rng(1).standard_normal((20, 5))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    g = compute_gates(net, X)
    out, _ = forward(net, g, X)
    E = effective_matrix(net, g)
    assert E.shape == (20, 3, 5)
    ref = np.einsum("nij,nj->ni", E, X)
    assert np.linalg.norm(out - ref) <= 1e-10 * np.linalg.norm(ref)


def test_effective_matrix_depth_one():
    net = init_network(NetworkShape(3, 2, 5, 1), 0)
    x = unit(np.array([0.3, -1.0, 0.5]))
    g = compute_gates(net, x)
    D0, D1 = (np.diag(g.masks[0, k].astype(float)) for k in (0, 1))
    ref = net.B @ D1 @ net.W[0] @ D0 @ net.C
    np.testing.assert_allclose(effective_matrix(net, g), ref, rtol=1e-12, atol=1e-15)
    assert effective_matrix(net, g).shape == (2, 3)


def test_forward_dimension_mismatch():
    net, g, ds = make_instance(n=3)
    with pytest.raises(DimensionError):
        forward(net, g, ds.X[:2])


def test_negative_values_pass_open_gates():
    net, g, ds = make_instance(n=10, m=32, L=3)
    _, hidden = forward(net, g, ds.X)
    assert any(np.any(h < 0) for h in hidden[1:])


def test_partition_identity_and_base_cases():
    net, g, ds = make_instance(n=4, d_x=3, d_y=2, m=7, L=3, seed=5)
    E = effective_matrix(net, g)
    sub = Subnetworks(net, g)
    L = net.shape.L
    for k in range(L + 1):
        P = sub.F_at(k + 1) @ sub.G_at(k)
        assert np.linalg.norm(P - E) <= 1e-10 * np.linalg.norm(E)
    masks = g.masks.astype(float)
    np.testing.assert_array_equal(sub.F_at(L + 1), net.B[None] * masks[:, L][:, None, :])
    np.testing.assert_array_equal(sub.G_at(0), masks[:, 0][:, :, None] * net.C[None])
    with pytest.raises(IndexError):
        subnetwork_F(net, g, 0)
    with pytest.raises(IndexError):
        subnetwork_G(net, g, L + 1)


def test_intermediate_Z():
    net, g, ds = make_instance(n=2, m=6, L=4, seed=1)
    masks = g.masks[1].astype(float)
    for k in range(1, 5):
        Z = intermediate_Z(net, g, k, k, i=1)
        np.testing.assert_array_equal(Z, np.diag(masks[k]))
        assert spectral_norm(Z) <= 1.0
    for ka in range(2, 5):
        for kb in range(1, ka):
            Z = intermediate_Z(net, g, ka, kb, i=1)
            rec = masks[ka][:, None] * (net.W[ka - 1] @ intermediate_Z(net, g, ka - 1, kb, i=1))
            np.testing.assert_allclose(Z, rec, atol=1e-14)
            op = intermediate_Z_operator(net, g, ka, kb, i=1)
            np.testing.assert_allclose(op @ np.eye(6), Z, atol=1e-14)
            np.testing.assert_allclose(op.rmatmat(np.eye(6)), Z.T, atol=1e-14)
    with pytest.raises(IndexError):
        intermediate_Z(net, g, 1, 2, i=0)


def test_relu_forward_cases():
    net = init_network(NetworkShape(4, 2, 6, 2), 0)
    relu = ReluNetwork.from_grelu(net)
    out, pre, masks = relu_forward(relu, np.zeros(4))
    assert np.all(out == 0) and not masks.any()
    for seed in range(3):
        x = unit(np.random.default_rng(seed).standard_normal(4))
        np.testing.assert_allclose(relu_forward(relu, x)[0], straight_line_relu(relu, x),
                                   rtol=1e-12, atol=1e-14)


def test_relu_all_positive_is_linear():
    s = NetworkShape(2, 1, 3, 2)
    C = np.abs(np.random.default_rng(0).standard_normal((3, 2))) + 0.1
    W = tuple(np.abs(np.random.default_rng(k).standard_normal((3, 3))) + 0.1 for k in (1, 2))
    B = np.ones((1, 3))
    relu = ReluNetwork(s, C, B, W)
    x = unit(np.array([1.0, 2.0]))
    np.testing.assert_allclose(relu_forward(relu, x)[0], B @ W[1] @ W[0] @ C @ x, rtol=1e-12)


def test_relu_masks_follow_weights_grelu_masks_do_not():
    net, g, ds = make_instance(n=6, m=12, L=2)
    relu = ReluNetwork.from_grelu(net)
    flipped = relu.with_weights([-w for w in relu.W])
    assert not np.array_equal(relu_forward(relu, ds.X)[2], relu_forward(flipped, ds.X)[2])
    assert compute_gates(net.with_weights([-w for w in net.W]), ds.X) == g


def test_relu_to_grelu_agrees():
    net, _, ds = make_instance(n=5, m=10, L=3)
    relu = ReluNetwork.from_grelu(net)
    back = relu_to_grelu(relu)
    out, _ = forward(back, compute_gates(back, ds.X), ds.X)
    np.testing.assert_allclose(out, relu_forward(relu, ds.X)[0], rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(-5, 5, allow_nan=False))
def test_linear_in_x_at_fixed_gates(seed, a):
    net, g, ds = make_instance(n=1, m=6, L=2, seed=seed % 50)
    x = ds.X[0]
    out1, _ = forward(net, g, a * x)
    out2, _ = forward(net, g, x)
    np.testing.assert_allclose(out1, a * out2, rtol=1e-12, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_partition_identity_property(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 5))
    net, g, _ = make_instance(n=2, d_x=3, d_y=2, m=5, L=L, seed=seed % 97)
    E = effective_matrix(net, g)
    sub = Subnetworks(net, g)
    for k in range(L + 1):
        P = sub.F_at(k + 1) @ sub.G_at(k)
        assert np.linalg.norm(P - E) <= 1e-10 * max(np.linalg.norm(E), 1e-300)
