"""GReLU to ReLU conversion with an identical training-set footprint.

Layer by layer, the ReLU weights are the minimal-norm solution of
``Wtilde_k relu(z_{k-1}) = h_k`` over all training examples, where ``h_k`` is
the GReLU hidden state and ``z_{k-1}`` the ReLU network's previous
pre-activation (already matched to ``h_{k-1}``). The result reads its output
linearly from ``z_L = h_L``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ContractError, ConversionError, DimensionError
from .linalg import min_norm_least_squares
from .model import GatePattern, GReluNetwork, ReluNetwork, propagate, relu_forward
from .train import loss

RESIDUAL_TOL = 1e-6


def grelu_to_relu(net: GReluNetwork, gates: GatePattern, ds: Dataset,
                  tol=RESIDUAL_TOL) -> ReluNetwork:
    """Equivalent ReLU network on the training set ``ds``.

    Requires ``n <= m``. Raises ``ConversionError`` naming the layer when a
    least-squares residual exceeds ``tol`` relative to the target.
    """
    s = net.shape
    if ds.n > s.m:
        raise ContractError(f"conversion needs n <= m, got n={ds.n}, m={s.m}")
    if gates.n != ds.n:
        raise DimensionError("gates and dataset disagree on the number of examples")
    hidden = propagate(net, gates.masks, ds.X)
    z_prev = ds.X @ net.C.T
    layers = []
    for k in range(1, s.L + 1):
        A = np.maximum(z_prev, 0.0)  # (n, m): columns of the m x n system
        T = hidden[k]
        # Wtilde A^T = T^T  <=>  A Wtilde^T = T
        Wt = min_norm_least_squares(A, T).T
        z = A @ Wt.T
        scale = np.linalg.norm(T)
        res = np.linalg.norm(z - T)
        if res > tol * max(scale, np.finfo(float).tiny):
            raise ConversionError(k, res / scale if scale else res)
        layers.append(Wt)
        z_prev = z
    return ReluNetwork(s, net.C, net.B, tuple(layers), output_relu=False)


@dataclass
class EquivalenceReport:
    layer_deviation: np.ndarray  # max |z_k - h_k| per layer k = 0..L
    output_deviation: float
    grelu_loss: float
    relu_loss: float
    negative_passthrough: float  # fraction of h entries < -1e-8, k >= 1

    @property
    def max_deviation(self) -> float:
        return float(self.layer_deviation.max())

    @property
    def loss_gap(self) -> float:
        den = max(abs(self.grelu_loss), np.finfo(float).tiny)
        return abs(self.relu_loss - self.grelu_loss) / den


def verify_equivalence(grelu: GReluNetwork, gates: GatePattern, relu: ReluNetwork,
                       ds: Dataset) -> EquivalenceReport:
    """Compare the training-set footprint of a GReLU and a ReLU network.

    Layer 0 compares ``relu(C x)`` with ``h_0``; layers k >= 1 compare the
    ReLU network's pre-activation ``z_k`` with ``h_k``, the quantity the
    conversion matches. ``negative_passthrough`` reports how much of the
    GReLU state is negative at open gates, i.e. values a post-activation
    comparison could never reproduce.
    """
    if grelu.shape != relu.shape:
        raise DimensionError("networks have different shapes")
    hidden = propagate(grelu, gates.masks, ds.X)
    out_g = hidden[-1] @ grelu.B.T
    out_r, pre, _ = relu_forward(relu, ds.X)
    dev = [np.max(np.abs(np.maximum(pre[0], 0.0) - hidden[0]), initial=0.0)]
    for k in range(1, grelu.shape.L + 1):
        dev.append(np.max(np.abs(pre[k] - hidden[k]), initial=0.0))
    neg = np.mean([np.mean(h < -1e-8) for h in hidden[1:]]) if grelu.shape.L else 0.0
    return EquivalenceReport(
        layer_deviation=np.array(dev),
        output_deviation=float(np.max(np.abs(out_g - out_r), initial=0.0)),
        grelu_loss=loss(grelu, gates, ds),
        relu_loss=loss(relu, None, ds),
        negative_passthrough=float(neg),
    )
