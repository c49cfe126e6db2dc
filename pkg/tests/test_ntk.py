import numpy as np
import pytest

from grelu.data import Dataset, gen_ackley
from grelu.errors import ContractError
from grelu.linalg import spectral_norm, sym_eig_extremes
from grelu.model import NetworkShape, compute_gates, forward, init_network
from grelu.ntk import (grad_wrt_layers, kernel_csv, kernel_drift, layer_kernels, ntk_kernel,
                       ntk_ratio)
from grelu.train import TrainConfig, train

from conftest import make_instance


def flat_grad(net, gates, x, p):
    return np.concatenate([g.ravel() for g in grad_wrt_layers(net, gates, x, p)])


def fd_output_grad(net, gates, x, p, k, h=1e-6):
    W = [w.copy() for w in net.W]
    G = np.zeros_like(W[k - 1])
    for a in range(G.shape[0]):
        for b in range(G.shape[1]):
            vals = []
            for s in (h, -h):
                Wp = [w.copy() for w in W]
                Wp[k - 1][a, b] += s
                vals.append(forward(net.with_weights(Wp), gates, x)[0][p - 1])
            G[a, b] = (vals[0] - vals[1]) / (2 * h)
    return G


def test_gradient_structure_and_fd():
    net, g, ds = make_instance(n=1, d_y=2, m=6, L=2)
    x = ds.X[0]
    for p in (1, 2):
        grads = grad_wrt_layers(net, g, x, p)
        assert len(grads) == 2
        for k, G in enumerate(grads, start=1):
            assert np.linalg.matrix_rank(G) <= 1
            fd = fd_output_grad(net, g, x, p, k)
            assert np.max(np.abs(fd - G)) <= 1e-5 * max(np.max(np.abs(G)), 1e-12)
    with pytest.raises(IndexError):
        grad_wrt_layers(net, g, x, 0)
    with pytest.raises(IndexError):
        grad_wrt_layers(net, g, x, 3)


def test_zero_input_zero_gradient():
    net, g, _ = make_instance(n=1, m=6, L=2)
    grads = grad_wrt_layers(net, g, np.zeros(net.shape.d_x), 1)
    assert all(np.all(G == 0) for G in grads)


def test_kernel_flattened_oracle():
    net, g, ds = make_instance(n=4, m=16, L=2)
    K = ntk_kernel(net, g, ds.X, 1)
    flats = [flat_grad(net, g.example(i), ds.X[i], 1) for i in range(4)]
    ref = np.array([[a @ b for b in flats] for a in flats])
    assert np.max(np.abs(K - ref)) <= 1e-10 * np.max(np.abs(ref))
    np.testing.assert_allclose(np.diag(K), [f @ f for f in flats], rtol=1e-12)


def test_kernel_symmetric_psd_and_layer_sum():
    ds = gen_ackley(8, 6, 0)
    net = init_network(NetworkShape(6, 2, 64, 3), 0)
    g = compute_gates(net, ds.X)
    for p in (1, 2):
        K = ntk_kernel(net, g, ds.X, p)
        assert np.array_equal(K, K.T)
        lo, _ = sym_eig_extremes(K)
        assert lo >= -1e-8 * np.trace(K) / 8
        parts = layer_kernels(net, g, ds.X, p)
        np.testing.assert_allclose(sum(parts), K, rtol=1e-12)
        for P in parts:
            assert sym_eig_extremes(P)[0] >= -1e-8 * np.trace(P) / 8


def test_ratio_trivial_cases():
    net, g, ds = make_instance(n=3, m=16, L=2)
    zero = [np.zeros_like(w) for w in net.W]
    assert np.all(ntk_ratio(net, zero, g, ds.X, 1) == 0)
    rng = np.random.default_rng(0)
    Wp = [0.01 * rng.standard_normal(w.shape) for w in net.W]
    a = ntk_ratio(net, Wp, g, ds.X, 1)
    b = ntk_ratio(net, [-w for w in Wp], g, ds.X, 1)
    # depth 2: the gradient change is linear in W', so both signs give the same norm
    np.testing.assert_allclose(a, b, rtol=1e-10)
    with pytest.raises(ContractError):
        ntk_ratio(net, Wp, g, ds.X, 1, xi=1e-6)
    single = ntk_ratio(net, Wp, g.example(0), ds.X[0], 1)
    assert single == pytest.approx(a[0], rel=1e-12)


@pytest.mark.slow
def test_ratio_shrinks_with_width():
    n, d, L = 8, 8, 3
    medians = []
    for m in (128, 256, 512):
        vals = []
        for seed in range(4):
            ds = gen_ackley(n, d, seed)
            net = init_network(NetworkShape(d, 1, m, L), seed)
            g = compute_gates(net, ds.X)
            cfg = TrainConfig(eta=0.05 * d / (L * m * m), max_iters=3000, target_loss=1e-2,
                              deterministic_reduction=False, log_every=100)
            trained, _ = train(net, ds, cfg, gates=g)
            Wp = [a - b for a, b in zip(trained.W, net.W)]
            vals.append(np.median(ntk_ratio(net, Wp, g, ds.X, 1)))
        medians.append(np.median(vals))
    assert medians[0] > medians[1] > medians[2]


def test_drift_cases():
    net, g, ds = make_instance(n=3, m=16, L=2)
    assert kernel_drift(net, net, g, ds.X, 1) == 0.0
    # with L=2 each per-layer kernel is linear in the other layer's weights squared,
    # so scaling every W by c multiplies K by c^2
    c = 1.7
    scaled = net.with_weights([c * w for w in net.W])
    K0, K1 = ntk_kernel(net, g, ds.X, 1), ntk_kernel(scaled, g, ds.X, 1)
    np.testing.assert_allclose(K1, c ** 2 * K0, rtol=1e-12)
    norm = np.sqrt(np.outer(np.diag(K0), np.diag(K0)))
    expected = np.max(np.abs(K1 - K0) / norm)
    assert kernel_drift(net, scaled, g, ds.X, 1) == pytest.approx(expected, rel=1e-12)
    other = init_network(net.shape, 77)
    with pytest.raises(ContractError):
        kernel_drift(net, other, g, ds.X, 1)


def test_drift_degenerate_diagonal():
    net, _, _ = make_instance(n=1, m=6, L=2)
    X = np.zeros((1, net.shape.d_x))
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = compute_gates(net, X)
    with pytest.raises(ContractError):
        kernel_drift(net, net, g, X, 1)


def test_drift_grows_with_larger_steps():
    small, large = [], []
    for seed in range(3):
        ds = gen_ackley(8, 8, seed)
        net = init_network(NetworkShape(8, 1, 128, 3), seed)
        g = compute_gates(net, ds.X)
        eta = 8 / (8 ** 4 * 27)
        for bucket, rate in ((small, eta), (large, 100 * eta)):
            # same number of steps; the larger rate moves the weights further
            try:
                t, _ = train(net, ds, TrainConfig(eta=rate, max_iters=20), gates=g)
            except Exception as exc:  # divergence counts as maximal drift
                t = exc.net
            bucket.append(kernel_drift(net, t, g, ds.X, 1))
    assert np.median(small) < np.median(large)


def test_kernel_csv_format():
    K = np.array([[1.0, 0.1], [0.1, 2.0]])
    text = kernel_csv(K, 1, 16, 2)
    lines = text.splitlines()
    assert lines[0] == "# ntk p=1 n=2 m=16 L=2"
    assert lines[1] == "1,0.10000000000000001"
