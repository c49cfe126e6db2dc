"""Explicit neural tangent kernel of the GReLU network.

Gates stay at the initial pattern for every quantity here. The gradient of
output ``p`` with respect to ``W_k`` is the rank-one matrix
``(F_{k+1}^T e_p)(G_{k-1} x)^T``, so kernel entries factor per layer into a
product of two inner products.
"""
from __future__ import annotations

import io

import numpy as np

from .errors import ContractError, DimensionError
from .linalg import spectral_norm
from .model import GatePattern, GReluNetwork, propagate
from .train import backprop_signals, fmt


def _factors(net: GReluNetwork, gates: GatePattern, X, p: int):
    """Per-layer ``a_k = F_{k+1}^T e_p`` and ``b_k = G_{k-1} x`` as ``(n, m)`` arrays."""
    if not 1 <= p <= net.shape.d_y:
        raise IndexError(f"output index must lie in 1..{net.shape.d_y}, got {p}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if gates.n != X.shape[0]:
        raise DimensionError("gates and inputs disagree on the number of examples")
    masks = gates.masks
    hidden = propagate(net, masks, X)
    E = np.zeros((X.shape[0], net.shape.d_y))
    E[:, p - 1] = 1.0
    back = backprop_signals(net, masks, E)
    L = net.shape.L
    return [back[k] for k in range(1, L + 1)], [hidden[k - 1] for k in range(1, L + 1)]


def grad_wrt_layers(net: GReluNetwork, gates: GatePattern, x, p: int) -> list:
    """``d y_p / d W_k`` for k = 1..L at a single input ``x`` (1-based ``p``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("grad_wrt_layers takes a single input vector")
    if gates.n != 1:
        raise DimensionError("pass the gate pattern of this single example")
    A, Bv = _factors(net, gates, x[None], p)
    return [np.outer(a[0], b[0]) for a, b in zip(A, Bv)]


def _mirror(K):
    upper = np.triu(K)
    return upper + np.triu(K, 1).T


def layer_kernels(net, gates, X, p) -> list:
    """Per-layer kernels ``(A_k A_k^T) * (B_k B_k^T)``; they sum to the NTK."""
    A, Bv = _factors(net, gates, X, p)
    return [_mirror((a @ a.T) * (b @ b.T)) for a, b in zip(A, Bv)]


def ntk_kernel(net: GReluNetwork, gates: GatePattern, X, p: int) -> np.ndarray:
    """``K(i, j) = <grad y_p(x_i), grad y_p(x_j)>``, exactly symmetric ``(n, n)``."""
    return _mirror(sum(layer_kernels(net, gates, X, p)))


def ntk_ratio(net_init: GReluNetwork, W_prime, gates: GatePattern, X, p: int, xi=None):
    """Relative change of the output gradient after perturbing the weights.

    ``||grad y_p(x, W_1 + W') - grad y_p(x, W_1)||_F / ||grad y_p(x, W_1)||_F``
    per input. When ``xi`` is given every ``||W'_k||_2`` must be at most
    ``xi / L``. Returns a scalar for a 1-D ``X``, else one ratio per row.
    """
    L = net_init.shape.L
    if len(W_prime) != L:
        raise DimensionError(f"expected {L} perturbation layers")
    if xi is not None:
        for k, Wp in enumerate(W_prime, start=1):
            if spectral_norm(Wp) > xi / L * (1 + 1e-12):
                raise ContractError(f"perturbation of layer {k} exceeds xi/L = {xi / L:.3g}")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    moved = net_init.with_weights([w + d for w, d in zip(net_init.W, W_prime)])
    A0, B0 = _factors(net_init, gates, X2, p)
    A1, B1 = _factors(moved, gates, X2, p)
    num = np.zeros(X2.shape[0])
    den = np.zeros(X2.shape[0])
    for i in range(X2.shape[0]):
        for a0, b0, a1, b1 in zip(A0, B0, A1, B1):
            g0 = np.outer(a0[i], b0[i])
            g1 = np.outer(a1[i], b1[i])
            num[i] += np.sum((g1 - g0) ** 2)
            den[i] += np.sum(g0 * g0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(den > 0, np.sqrt(num) / np.sqrt(den), 0.0)
    return float(ratio[0]) if single else ratio


def kernel_drift(net_init: GReluNetwork, net_t: GReluNetwork, gates: GatePattern, X,
                 p: int) -> float:
    """``max_{i,j} |K_t(i,j) - K_init(i,j)| / sqrt(K_init(i,i) K_init(j,j))``."""
    for a, b in zip((net_init.C, net_init.B) + net_init.Psi, (net_t.C, net_t.B) + net_t.Psi):
        if not np.array_equal(a, b):
            raise ContractError("networks do not share their frozen parts")
    K0 = ntk_kernel(net_init, gates, X, p)
    Kt = ntk_kernel(net_t, gates, X, p)
    diag = np.diag(K0)
    if np.any(diag <= 0):
        raise ContractError("degenerate kernel: zero diagonal entry")
    norm = np.sqrt(np.outer(diag, diag))
    return float(np.max(np.abs(Kt - K0) / norm))


def kernel_csv(K, p, m, L) -> str:
    buf = io.StringIO()
    buf.write(f"# ntk p={p} n={K.shape[0]} m={m} L={L}\n")
    for row in K:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()
