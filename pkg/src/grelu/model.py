"""GReLU and baseline ReLU networks.

A GReLU network computes ``B D_L W_L ... D_1 W_1 D_0 C x`` where the 0/1
diagonal gates ``D_k`` come from a frozen auxiliary network
(``z_0 = [Cx]^+``, ``z_k = [Psi_k z_{k-1}]^+``) and never change while the
``W_k`` are trained. Batched code paths keep examples on the leading axis:
hidden states are ``(n, m)`` arrays and gate masks ``(n, L+1, m)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .errors import ContractError, DimensionError, InputError
from .linalg import RngStream, gaussian_matrix

# Stream ids: high word is the role, low word the layer index.
_STREAM_C = 1 << 32
_STREAM_B = 2 << 32
_STREAM_PSI = 3 << 32
_STREAM_W = 4 << 32


@dataclass(frozen=True)
class NetworkShape:
    d_x: int
    d_y: int
    m: int
    L: int

    def __post_init__(self):
        for name in ("d_x", "d_y", "m", "L"):
            if int(getattr(self, name)) < 1:
                raise DimensionError(f"{name} must be >= 1")

    def as_tuple(self):
        return (self.d_x, self.d_y, self.m, self.L)


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GReluNetwork:
    """Frozen ``C``, ``B``, ``Psi`` plus trained layers ``W``."""

    shape: NetworkShape
    C: np.ndarray
    B: np.ndarray
    Psi: tuple
    W: tuple

    def __post_init__(self):
        s = self.shape
        object.__setattr__(self, "C", _frozen(self.C))
        object.__setattr__(self, "B", _frozen(self.B))
        object.__setattr__(self, "Psi", tuple(_frozen(p) for p in self.Psi))
        object.__setattr__(self, "W", tuple(_frozen(w) for w in self.W))
        if self.C.shape != (s.m, s.d_x) or self.B.shape != (s.d_y, s.m):
            raise DimensionError("C or B inconsistent with network shape")
        if len(self.Psi) != s.L or len(self.W) != s.L:
            raise DimensionError(f"expected {s.L} Psi and W layers")
        for mat in self.Psi + self.W:
            if mat.shape != (s.m, s.m):
                raise DimensionError("hidden layers must be m x m")

    def with_weights(self, W) -> "GReluNetwork":
        """Same frozen parts, new trained layers."""
        return replace(self, W=tuple(W))


@dataclass(frozen=True, eq=False)
class ReluNetwork:
    """Plain ReLU network sharing ``C`` and ``B`` with a GReLU network.

    ``z_0 = C x``, ``z_k = Wtilde_k relu(z_{k-1})``. The output is
    ``B relu(z_L)`` when ``output_relu`` is set, otherwise the linear readout
    ``B z_L`` (the form produced by GReLU conversion, whose ``z_L`` already
    carries the last gate).
    """

    shape: NetworkShape
    C: np.ndarray
    B: np.ndarray
    W: tuple
    output_relu: bool = True

    def __post_init__(self):
        s = self.shape
        object.__setattr__(self, "C", _frozen(self.C))
        object.__setattr__(self, "B", _frozen(self.B))
        object.__setattr__(self, "W", tuple(_frozen(w) for w in self.W))
        if self.C.shape != (s.m, s.d_x) or self.B.shape != (s.d_y, s.m):
            raise DimensionError("C or B inconsistent with network shape")
        if len(self.W) != s.L or any(w.shape != (s.m, s.m) for w in self.W):
            raise DimensionError(f"expected {s.L} layers of shape m x m")

    @property
    def Wtilde(self):
        return self.W

    def with_weights(self, W) -> "ReluNetwork":
        return replace(self, W=tuple(W))

    @classmethod
    def from_grelu(cls, net: GReluNetwork) -> "ReluNetwork":
        """Baseline ReLU net starting from the same trainable weights."""
        return cls(net.shape, net.C, net.B, net.W, output_relu=True)


@dataclass(frozen=True, eq=False)
class GatePattern:
    """Per-example masks ``D_0..D_L`` stored one bit per neuron."""

    bits: np.ndarray  # (n, L+1, ceil(m/8)) uint8
    m: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_masks(cls, masks) -> "GatePattern":
        masks = np.asarray(masks, dtype=bool)
        if masks.ndim == 2:
            masks = masks[None]
        return cls(np.packbits(masks, axis=-1), masks.shape[-1])

    @property
    def masks(self) -> np.ndarray:
        """Boolean array ``(n, L+1, m)``."""
        if "masks" not in self._cache:
            out = np.unpackbits(self.bits, axis=-1, count=self.m).astype(bool)
            out.setflags(write=False)
            self._cache["masks"] = out
        return self._cache["masks"]

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @property
    def depth(self) -> int:
        return self.bits.shape[1] - 1

    def example(self, i: int) -> "GatePattern":
        return GatePattern(self.bits[i:i + 1], self.m)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        return (isinstance(other, GatePattern) and self.m == other.m
                and np.array_equal(self.bits, other.bits))

    __hash__ = None


# ---------------------------------------------------------------- init


def init_network(shape: NetworkShape, seed: int) -> GReluNetwork:
    """Random GReLU network: ``W, Psi ~ N(0, 2/m)``, ``C ~ N(0, 2/d_x)``, ``B ~ N(0, 2/d_y)``."""
    s = shape
    C = gaussian_matrix(s.m, s.d_x, 2.0 / s.d_x, RngStream(seed, _STREAM_C))
    B = gaussian_matrix(s.d_y, s.m, 2.0 / s.d_y, RngStream(seed, _STREAM_B))
    Psi = [gaussian_matrix(s.m, s.m, 2.0 / s.m, RngStream(seed, _STREAM_PSI + k))
           for k in range(1, s.L + 1)]
    W = [gaussian_matrix(s.m, s.m, 2.0 / s.m, RngStream(seed, _STREAM_W + k))
         for k in range(1, s.L + 1)]
    return GReluNetwork(s, C, B, tuple(Psi), tuple(W))


# ---------------------------------------------------------------- gates


def _as_batch(x, d: int, name="x"):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != d:
        raise DimensionError(f"{name} must have trailing dimension {d}, got shape {x.shape}")
    return X, single


def compute_gates(net: GReluNetwork, x) -> GatePattern:
    """Gate masks for one example (1-D ``x``) or a batch (rows of ``x``).

    A gate is open iff the auxiliary pre-activation is strictly positive.
    Only ``C`` and ``Psi`` are consulted, never ``W``.
    """
    X, _ = _as_batch(x, net.shape.d_x)
    if not np.all(np.isfinite(X)):
        raise InputError("input contains non-finite values")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        warnings.warn("inputs are not unit-norm; gate statistics assume normalized data",
                      stacklevel=2)
    z = X @ net.C.T
    masks = [z > 0]
    z = np.maximum(z, 0.0)
    for P in net.Psi:
        z = z @ P.T
        masks.append(z > 0)
        z = np.maximum(z, 0.0)
    return GatePattern.from_masks(np.stack(masks, axis=1))


# ---------------------------------------------------------------- forward


def propagate(net: GReluNetwork, masks: np.ndarray, X: np.ndarray) -> list:
    """Hidden states ``h_0..h_L`` as ``(n, m)`` arrays for a batch."""
    h = (X @ net.C.T) * masks[:, 0]
    hidden = [h]
    for k, Wk in enumerate(net.W, start=1):
        h = (h @ Wk.T) * masks[:, k]
        hidden.append(h)
    return hidden


def _check_gates(net, gates: GatePattern, n: int):
    if gates.m != net.shape.m or gates.depth != net.shape.L:
        raise DimensionError("gate pattern does not match network shape")
    if gates.n != n:
        raise DimensionError(f"gate pattern holds {gates.n} examples, input has {n}")


def forward(net: GReluNetwork, gates: GatePattern, x):
    """Network output and hidden states with the given fixed gates.

    For a 1-D ``x`` returns ``(output (d_y,), [h_0..h_L])``; for a batch the
    output is ``(n, d_y)`` and each ``h_k`` is ``(n, m)``. Negative values
    pass through open gates unchanged.
    """
    X, single = _as_batch(x, net.shape.d_x)
    _check_gates(net, gates, X.shape[0])
    hidden = propagate(net, gates.masks, X)
    out = hidden[-1] @ net.B.T
    if single:
        return out[0], [h[0] for h in hidden]
    return out, hidden


def effective_matrix(net: GReluNetwork, gates: GatePattern) -> np.ndarray:
    """``B D_L W_L ... D_0 C``: ``(d_y, d_x)`` for one example, ``(n, d_y, d_x)`` for many."""
    masks = gates.masks
    if gates.m != net.shape.m or gates.depth != net.shape.L:
        raise DimensionError("gate pattern does not match network shape")
    L = net.shape.L
    M = net.B[None, :, :] * masks[:, L][:, None, :]
    for k in range(L, 0, -1):
        M = (M @ net.W[k - 1]) * masks[:, k - 1][:, None, :]
    M = M @ net.C
    return M[0] if gates.n == 1 else M


class Subnetworks:
    """All prefix products ``G_0..G_L`` and suffix products ``F_1..F_{L+1}``.

    ``G_k = D_k W_k ... D_1 W_1 D_0 C`` has shape ``(n, m, d_x)`` and
    ``F_k = B D_L W_L ... D_k W_k D_{k-1}`` has shape ``(n, d_y, m)``, so that
    ``F_{k+1} @ G_k`` is the effective matrix for every k. Built with one
    pass in each direction.
    """

    def __init__(self, net: GReluNetwork, gates: GatePattern):
        if gates.m != net.shape.m or gates.depth != net.shape.L:
            raise DimensionError("gate pattern does not match network shape")
        masks = gates.masks
        L = net.shape.L
        G = [masks[:, 0][:, :, None] * net.C[None]]
        for k in range(1, L + 1):
            G.append(masks[:, k][:, :, None] * (net.W[k - 1] @ G[-1]))
        F = [None] * (L + 2)
        F[L + 1] = net.B[None] * masks[:, L][:, None, :]
        for k in range(L, 0, -1):
            F[k] = (F[k + 1] @ net.W[k - 1]) * masks[:, k - 1][:, None, :]
        self.G = G
        self.F = F
        self.L = L
        self.n = gates.n

    def F_at(self, k):
        if not 1 <= k <= self.L + 1:
            raise IndexError(f"F index must lie in 1..{self.L + 1}, got {k}")
        return self.F[k]

    def G_at(self, k):
        if not 0 <= k <= self.L:
            raise IndexError(f"G index must lie in 0..{self.L}, got {k}")
        return self.G[k]


def subnetwork_F(net: GReluNetwork, gates: GatePattern, k: int) -> np.ndarray:
    """Output-side sub-network ``F_k``, ``1 <= k <= L+1``."""
    if not 1 <= k <= net.shape.L + 1:
        raise IndexError(f"F index must lie in 1..{net.shape.L + 1}, got {k}")
    F = Subnetworks(net, gates).F[k]
    return F[0] if gates.n == 1 else F


def subnetwork_G(net: GReluNetwork, gates: GatePattern, k: int) -> np.ndarray:
    """Input-side sub-network ``G_k``, ``0 <= k <= L``."""
    if not 0 <= k <= net.shape.L:
        raise IndexError(f"G index must lie in 0..{net.shape.L}, got {k}")
    G = Subnetworks(net, gates).G[k]
    return G[0] if gates.n == 1 else G


def _single_masks(net, gates, i):
    if gates.m != net.shape.m or gates.depth != net.shape.L:
        raise DimensionError("gate pattern does not match network shape")
    if i is None:
        if gates.n != 1:
            raise ContractError("pattern holds several examples; pass an example index")
        i = 0
    return gates.masks[i]


def _check_z_indices(net, k_a, k_b):
    if not 1 <= k_b <= k_a <= net.shape.L:
        raise IndexError(f"need 1 <= k_b <= k_a <= L, got k_a={k_a}, k_b={k_b}")


def intermediate_Z(net: GReluNetwork, gates: GatePattern, k_a: int, k_b: int, i=None):
    """Dense ``Z_{k_a,k_b} = D_{k_a} W_{k_a} ... W_{k_b+1} D_{k_b}`` for one example."""
    _check_z_indices(net, k_a, k_b)
    masks = _single_masks(net, gates, i)
    Z = np.diag(masks[k_b].astype(np.float64))
    for k in range(k_b + 1, k_a + 1):
        Z = masks[k][:, None] * (net.W[k - 1] @ Z)
    return Z


def open_blocks(net: GReluNetwork, gates: GatePattern, i=None):
    """Open-neuron index sets and the matching sub-blocks of every ``W_k``.

    Returns ``(idx, blocks)`` with ``idx[k]`` the open neurons of layer k and
    ``blocks[k] = W_k[idx[k]][:, idx[k-1]]`` for k = 1..L (``blocks[0]`` is
    None). Products of masked layers only ever touch these blocks.
    """
    masks = _single_masks(net, gates, i)
    idx = [np.flatnonzero(mk) for mk in masks]
    blocks = [None] + [net.W[k - 1][np.ix_(idx[k], idx[k - 1])]
                       for k in range(1, net.shape.L + 1)]
    return idx, blocks


def reduced_Z_operator(idx, blocks, k_a: int, k_b: int) -> LinearOperator:
    """``Z_{k_a,k_b}`` restricted to open rows and columns; same nonzero singular values."""
    layers = range(k_b + 1, k_a + 1)

    def matvec(v):
        v = np.ravel(v)
        for k in layers:
            v = blocks[k] @ v
        return v

    def rmatvec(v):
        v = np.ravel(v)
        for k in reversed(layers):
            v = blocks[k].T @ v
        return v

    shape = (len(idx[k_a]), len(idx[k_b]))
    return LinearOperator(shape, matvec=matvec, rmatvec=rmatvec, dtype=np.float64)


def intermediate_Z_operator(net: GReluNetwork, gates: GatePattern, k_a: int, k_b: int,
                            i=None) -> LinearOperator:
    """Matrix-free ``Z_{k_a,k_b}``, working on open neurons only."""
    _check_z_indices(net, k_a, k_b)
    idx, blocks = open_blocks(net, gates, i)
    inner = reduced_Z_operator(idx, blocks, k_a, k_b)
    m = net.shape.m

    def matvec(v):
        out = np.zeros(m)
        if len(idx[k_a]) and len(idx[k_b]):
            out[idx[k_a]] = inner.matvec(np.ravel(v)[idx[k_b]])
        return out

    def rmatvec(v):
        out = np.zeros(m)
        if len(idx[k_a]) and len(idx[k_b]):
            out[idx[k_b]] = inner.rmatvec(np.ravel(v)[idx[k_a]])
        return out

    return LinearOperator((m, m), matvec=matvec, rmatvec=rmatvec, dtype=np.float64)


# ---------------------------------------------------------------- relu


def relu_forward(relu: ReluNetwork, x):
    """Evaluate the ReLU network, recomputing its own masks.

    Returns ``(output, [z_0..z_L], masks)``; masks are ``z_k > 0``.
    Batched inputs give ``(n, d_y)`` output, ``(n, m)`` pre-activations and
    ``(n, L+1, m)`` masks.
    """
    X, single = _as_batch(x, relu.shape.d_x)
    if not np.all(np.isfinite(X)):
        raise InputError("input contains non-finite values")
    z = X @ relu.C.T
    pre = [z]
    for Wk in relu.W:
        z = np.maximum(z, 0.0) @ Wk.T
        pre.append(z)
    last = np.maximum(z, 0.0) if relu.output_relu else z
    out = last @ relu.B.T
    masks = np.stack([p > 0 for p in pre], axis=1)
    if single:
        return out[0], [p[0] for p in pre], masks[0]
    return out, pre, masks


def relu_to_grelu(relu: ReluNetwork) -> GReluNetwork:
    """GReLU network whose gates reproduce ``relu``'s own activation pattern.

    Sets ``Psi_k = W_k = Wtilde_k``. With ``output_relu`` set, the two
    networks agree on every input at the moment of conversion.
    """
    return GReluNetwork(relu.shape, relu.C, relu.B, relu.W, relu.W)
