"""Empirical probes of the convergence analysis.

Each probe measures a quantity on a concrete network and compares it with
the bound the analysis predicts. Probes are read-only. High-probability
statements are meant to be aggregated over many seeds with
:func:`seed_quota` rather than asserted per instance.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ContractError, CostError
from .linalg import spectral_norm, sym_eig_extremes
from .model import (GatePattern, GReluNetwork, Subnetworks, compute_gates,
                    effective_matrix, open_blocks, reduced_Z_operator)
from .train import TrainLog, fmt, layer_gradients, loss, residuals

DEFAULT_THETA = 1.0 / 3.0
MAX_DECOMPOSITION_DEPTH = 6


# ---------------------------------------------------------------- constants


def alpha_x(m, d_x):
    return m / (12.0 * d_x)


def alpha_y(m, d_y):
    return m / (12.0 * d_y)


def beta_x(m, d_x):
    return 27.0 * m / (4.0 * d_x)


def beta_y(m, d_y):
    return 27.0 * m / (4.0 * d_y)


def alpha(m, d_x, d_y):
    """``sqrt(alpha_x alpha_y) = m / (12 sqrt(d_x d_y))``."""
    return math.sqrt(alpha_x(m, d_x) * alpha_y(m, d_y))


def beta(m, d_x, d_y):
    return math.sqrt(beta_x(m, d_x) * beta_y(m, d_y))


def z_norm_bound(L, theta=DEFAULT_THETA, trained=False):
    """``sqrt(12 L) e^{theta/2} theta^{-1/2}`` at init, ``4 sqrt(L) ...`` after training."""
    lead = 4.0 * math.sqrt(L) if trained else math.sqrt(12.0 * L)
    return lead * math.exp(theta / 2.0) / math.sqrt(theta)


def initial_loss_bound(m, n, d_x):
    return 4.0 * m * n / d_x


# ---------------------------------------------------------------- report


@dataclass
class Record:
    quantity: str
    measured: float
    bound: float
    passed: bool
    k: int | None = None
    i: int | None = None
    j: int | None = None


@dataclass
class TheoryReport:
    records: list = field(default_factory=list)

    def add(self, quantity, measured, bound, passed, k=None, i=None, j=None):
        self.records.append(Record(quantity, float(measured), float(bound), bool(passed),
                                   k, i, j))

    def extend(self, other: "TheoryReport"):
        self.records.extend(other.records)
        return self

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.records)

    def select(self, quantity) -> list:
        return [r for r in self.records if r.quantity == quantity]

    def measured(self, quantity) -> np.ndarray:
        return np.array([r.measured for r in self.select(quantity)])

    def __len__(self):
        return len(self.records)

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "k", "i", "j", "measured", "bound", "pass"])

        def idx(v):
            return "" if v is None else str(v)

        for r in self.records:
            w.writerow([r.quantity, idx(r.k), idx(r.i), idx(r.j), fmt(r.measured),
                        fmt(r.bound), "1" if r.passed else "0"])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def seed_quota(flags, quota=0.95) -> bool:
    """True when at least ``quota`` of the per-seed flags are set."""
    flags = list(flags)
    return bool(flags) and sum(bool(f) for f in flags) >= quota * len(flags) - 1e-12


# ---------------------------------------------------------------- probes


def eig_bounds_report(net: GReluNetwork, gates: GatePattern, subnets=None) -> TheoryReport:
    """Extreme eigenvalues of ``F_k F_k^T`` and ``G_k^T G_k`` against the concentration bounds.

    Covers ``F_1..F_{L+1}`` and ``G_0..G_L`` for every example.
    """
    s = net.shape
    sub = subnets or Subnetworks(net, gates)
    ax, bx = alpha_x(s.m, s.d_x), beta_x(s.m, s.d_x)
    ay, by = alpha_y(s.m, s.d_y), beta_y(s.m, s.d_y)
    rep = TheoryReport()
    for k in range(0, s.L + 1):
        for i, G in enumerate(sub.G[k]):
            lo, hi = sym_eig_extremes(G.T @ G)
            rep.add("G_gram_min", lo, ax, lo >= ax, k=k, i=i)
            rep.add("G_gram_max", hi, bx, hi <= bx, k=k, i=i)
    for k in range(1, s.L + 2):
        for i, F in enumerate(sub.F[k]):
            gram = F @ F.T
            gram = 0.5 * (gram + gram.T)
            lo, hi = sym_eig_extremes(gram)
            rep.add("F_gram_min", lo, ay, lo >= ay, k=k, i=i)
            rep.add("F_gram_max", hi, by, hi <= by, k=k, i=i)
    return rep


def cross_products(net: GReluNetwork, gates: GatePattern, ds: Dataset, subnets=None):
    """``|<G_{k-1}^j x_j, G_{k-1}^i x_i>| * ||F_{k+1}^j F_{k+1}^{iT}||_2`` for k=1..L, i != j.

    Returned as an array of shape ``(L, n, n)`` with a zero diagonal.
    """
    s = net.shape
    sub = subnets or Subnetworks(net, gates)
    n = ds.n
    out = np.zeros((s.L, n, n))
    for k in range(1, s.L + 1):
        gx = np.einsum("imd,id->im", sub.G[k - 1], ds.X)
        inner = np.abs(gx @ gx.T)
        F = sub.F[k + 1]
        for i in range(n):
            for j in range(n):
                if i != j:
                    out[k - 1, i, j] = inner[i, j] * spectral_norm(F[j] @ F[i].T)
    return out


def cross_term_report(net: GReluNetwork, gates: GatePattern, ds: Dataset) -> TheoryReport:
    """Cross-example term and the implied ``gamma``.

    Each (k, i, j) product is compared with ``alpha^2 / (2 n)``, the largest
    value of ``gamma beta^2`` compatible with ``beta^2 gamma n <= alpha^2 / 2``.
    A final ``gamma_hat`` record holds ``max / beta^2`` against
    ``alpha^2 / (2 n beta^2)``.
    """
    s = net.shape
    a = alpha(s.m, s.d_x, s.d_y)
    b = beta(s.m, s.d_x, s.d_y)
    rep = TheoryReport()
    if ds.n < 2:
        rep.add("gamma_hat", 0.0, math.inf, True)
        return rep
    P = cross_products(net, gates, ds)
    limit = a * a / (2.0 * ds.n)
    for k in range(1, s.L + 1):
        for i in range(ds.n):
            for j in range(ds.n):
                if i != j:
                    rep.add("cross_product", P[k - 1, i, j], limit, P[k - 1, i, j] <= limit,
                            k=k, i=i, j=j)
    gamma_hat = P.max() / (b * b)
    rep.add("gamma_hat", gamma_hat, limit / (b * b), gamma_hat * ds.n * b * b <= a * a / 2)
    return rep


def gamma_hat(net, gates, ds) -> float:
    rec = cross_term_report(net, gates, ds).select("gamma_hat")
    return rec[0].measured


def gate_overlap(net: GReluNetwork, x_i, x_j):
    """Per-layer fraction of neurons open for both inputs, on propagated gates.

    Returns ``(overlap, cosine)``: both arrays of length ``L+1``. ``cosine[k]``
    is the cosine between the two vectors that layer k's gate is computed
    from (``x`` itself for k = 0), so callers can check whether the
    near-orthogonality precondition holds at that layer.
    """
    X = np.vstack([x_i, x_j])
    masks = compute_gates(net, X).masks
    overlap = np.mean(masks[0] & masks[1], axis=1)
    inputs = [X]
    z = np.maximum(X @ net.C.T, 0.0)
    for P in net.Psi:
        inputs.append(z)
        z = np.maximum(z @ P.T, 0.0)
    cos = []
    for v in inputs:
        denom = np.linalg.norm(v[0]) * np.linalg.norm(v[1])
        cos.append(float(v[0] @ v[1] / denom) if denom > 0 else 0.0)
    return overlap, np.array(cos)


def direct_gate_overlap(net: GReluNetwork, x_i, x_j):
    """Overlap when every layer gates directly on the inputs.

    Layer 0 gates on ``C x``; layer k >= 1 gates on ``Psi_k u`` where ``u`` is
    the input lifted to ``R^m`` through ``C`` and renormalized, which keeps
    the pairwise cosine of the inputs (the setting of the overlap bound:
    a Gaussian matrix applied to two near-orthogonal unit vectors).
    """
    X = np.vstack([x_i, x_j])
    out = [np.mean((X[0] @ net.C.T > 0) & (X[1] @ net.C.T > 0))]
    # orthonormal lift preserves inner products exactly
    q, _ = np.linalg.qr(net.C)
    U = X @ q.T
    for P in net.Psi:
        s = U @ P.T > 0
        out.append(np.mean(s[0] & s[1]))
    return np.array(out)


def z_norm_report(net: GReluNetwork, gates: GatePattern, theta=DEFAULT_THETA,
                  trained=False, examples=None) -> TheoryReport:
    """``||Z_{k_a,k_b}||_2`` for all ``1 <= k_b <= k_a <= L`` against the chain bound."""
    if not 0 < theta < 0.5:
        raise ContractError("theta must lie in (0, 1/2)")
    L = net.shape.L
    if L > 16:
        raise CostError("all-pairs Z norms are limited to depth <= 16")
    bound = z_norm_bound(L, theta, trained)
    rep = TheoryReport()
    for i in (range(gates.n) if examples is None else examples):
        idx, blocks = open_blocks(net, gates, i)
        for k_a in range(1, L + 1):
            for k_b in range(1, k_a + 1):
                if k_a == k_b:
                    val = float(len(idx[k_a]) > 0)
                elif len(idx[k_a]) == 0 or len(idx[k_b]) == 0:
                    val = 0.0
                else:
                    val = spectral_norm(reduced_Z_operator(idx, blocks, k_a, k_b))
                # reported pair: (k = k_a, j = k_b)
                rep.add("z_norm", val, bound, val <= bound, k=k_a, i=i, j=k_b)
    return rep


def _delta_term(net, masks_i, grads, eta):
    L = net.shape.L
    total = np.zeros((net.shape.d_y, net.shape.d_x))
    for size in range(2, L + 1):
        coef = (-eta) ** (size - 2)
        for subset in itertools.combinations(range(1, L + 1), size):
            chosen = set(subset)
            M = net.B * masks_i[L]
            for k in range(L, 0, -1):
                M = (M @ (grads[k - 1] if k in chosen else net.W[k - 1])) * masks_i[k - 1]
            total += coef * (M @ net.C)
    return total


def update_decomposition(net_t: GReluNetwork, gates: GatePattern, ds: Dataset, eta,
                         first_order_only=False):
    """Per-example terms of one GD step: ``(self_term, cross_term, second_order)``.

    ``W^i_{t+1} - W^i_t = -eta * self - eta * cross + eta^2 * second``; each
    entry is a list over examples of ``(d_y, d_x)`` matrices.
    """
    L = net_t.shape.L
    if L > MAX_DECOMPOSITION_DEPTH and not first_order_only:
        raise CostError(f"second-order term enumerates 2^L subsets; depth {L} > "
                        f"{MAX_DECOMPOSITION_DEPTH}")
    sub = Subnetworks(net_t, gates)
    R, _ = residuals(net_t, gates, ds)
    grads, _ = layer_gradients(net_t, gates, ds)
    n = ds.n
    self_terms, cross_terms, second = [], [], []
    for i in range(n):
        st = np.zeros((net_t.shape.d_y, net_t.shape.d_x))
        ct = np.zeros_like(st)
        for k in range(1, L + 1):
            Fi, Gi = sub.F[k + 1][i], sub.G[k - 1][i]
            for j in range(n):
                Fj, Gj = sub.F[k + 1][j], sub.G[k - 1][j]
                term = Fi @ Fj.T @ np.outer(R[j], ds.X[j]) @ Gj.T @ Gi
                if j == i:
                    st += term
                else:
                    ct += term
        self_terms.append(st)
        cross_terms.append(ct)
        second.append(None if first_order_only
                      else _delta_term(net_t, gates.masks[i], grads, eta))
    return self_terms, cross_terms, second


def decomposition_check(net_t: GReluNetwork, net_t1: GReluNetwork, gates: GatePattern,
                        ds: Dataset, eta, first_order_only=False) -> float:
    """Largest relative Frobenius residual of the one-step update decomposition.

    ``net_t1`` must come from ``net_t`` by one GD step with rate ``eta``.
    With ``first_order_only`` the ``eta^2`` term is dropped and the residual
    is expected to be ``O(eta^2)`` instead of round-off.
    """
    st, ct, sec = update_decomposition(net_t, gates, ds, eta, first_order_only)
    E0 = effective_matrix(net_t, gates)
    E1 = effective_matrix(net_t1, gates)
    if ds.n == 1:
        E0, E1 = E0[None], E1[None]
    worst = 0.0
    for i in range(ds.n):
        lhs = E1[i] - E0[i]
        rhs = -eta * st[i] - eta * ct[i]
        if sec[i] is not None:
            rhs = rhs + eta * eta * sec[i]
        num = np.linalg.norm(lhs - rhs)
        den = np.linalg.norm(lhs)
        if den == 0.0:
            res = 0.0 if num == 0.0 else math.inf
        else:
            res = num / den
        worst = max(worst, res)
    return worst


def descent_rate_check(log: TrainLog, alpha_value, L, eta, slack=1e-12) -> float:
    """Fraction of consecutive logged steps with ``l_{t+1} <= (1 - eta alpha^2 L / 2) l_t``.

    Rows further apart than one iteration use the compounded factor.
    """
    rho = eta * alpha_value**2 * L / 2.0
    if rho >= 1.0:
        raise ContractError(f"rate factor {rho:.3g} must be below 1")
    rows = log.rows
    if len(rows) < 2:
        raise ContractError("need at least two log rows")
    ok = 0
    for a, b in zip(rows, rows[1:]):
        factor = (1.0 - rho) ** (b.iter - a.iter)
        ok += b.loss <= factor * a.loss + slack
    return ok / (len(rows) - 1)


def grad_norm_bound_check(net, gates, ds, beta_value=None, gamma_value=0.0) -> TheoryReport:
    """``||grad_k||_2^2 <= (beta^2 + n gamma beta^2) loss`` per layer."""
    s = net.shape
    b = beta(s.m, s.d_x, s.d_y) if beta_value is None else beta_value
    grads, cur = layer_gradients(net, gates, ds)
    bound = (b * b + ds.n * gamma_value * b * b) * cur
    rep = TheoryReport()
    for k, g in enumerate(grads, start=1):
        val = spectral_norm(g) ** 2
        rep.add("grad_norm_sq", val, bound, val <= bound * (1 + 1e-12), k=k)
    return rep


def initial_loss_check(net, gates, ds) -> TheoryReport:
    """Loss at initialization against ``4 m n / d_x``."""
    bound = initial_loss_bound(net.shape.m, ds.n, net.shape.d_x)
    val = loss(net, gates, ds)
    rep = TheoryReport()
    rep.add("initial_loss", val, bound, val <= bound)
    return rep
