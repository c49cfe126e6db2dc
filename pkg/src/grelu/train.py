"""Squared loss, closed-form layer gradients and full-batch gradient descent.

GReLU gates are computed once and reused for every step. The ReLU baseline
recomputes its masks at each forward pass and is trained by subgradient
descent (the derivative of ReLU at 0 is taken as 0).
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import ContractError, DimensionError, DivergenceError
from .linalg import spectral_norm
from .model import (GatePattern, GReluNetwork, NetworkShape, ReluNetwork,
                    compute_gates, propagate, relu_forward)

CSV_COLUMNS = ("iter", "loss", "grad_norm", "grad_tdiff", "tau", "eta", "wall_ms")


def fmt(x) -> str:
    """17 significant digits, the CSV float convention of this package."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------- loss and gradients


def _check(net, gates, ds):
    if ds.d_x != net.shape.d_x or ds.d_y != net.shape.d_y:
        raise DimensionError("dataset dimensions do not match network")
    if gates is not None and (gates.n != ds.n or gates.m != net.shape.m
                              or gates.depth != net.shape.L):
        raise DimensionError(f"gates hold {gates.n} examples, dataset has {ds.n}")


def residuals(net: GReluNetwork, gates: GatePattern, ds: Dataset):
    """``(output - y)`` per example plus the hidden states."""
    _check(net, gates, ds)
    hidden = propagate(net, gates.masks, ds.X)
    return hidden[-1] @ net.B.T - ds.Y, hidden


def loss(net, gates, ds: Dataset) -> float:
    """Half the sum of squared residuals over the dataset."""
    if isinstance(net, ReluNetwork):
        _check(net, None, ds)
        out, _, _ = relu_forward(net, ds.X)
        r = out - ds.Y
    else:
        r, _ = residuals(net, gates, ds)
    return 0.5 * float(np.sum(np.sum(r * r, axis=1)))


def _accumulate(back, hidden_prev, deterministic):
    # sum_i back[i] outer hidden_prev[i]
    if not deterministic:
        return back.T @ hidden_prev
    out = np.zeros((back.shape[1], hidden_prev.shape[1]))
    for a, b in zip(back, hidden_prev):
        out += np.outer(a, b)
    return out


def backprop_signals(net: GReluNetwork, masks, R) -> list:
    """Rows ``F_{k+1}^T r_i`` for k = 0..L (index k), as ``(n, m)`` arrays."""
    L = net.shape.L
    back = [None] * (L + 1)
    g = (R @ net.B) * masks[:, L]
    back[L] = g
    for k in range(L, 0, -1):
        g = (g @ net.W[k - 1]) * masks[:, k - 1]
        back[k - 1] = g
    return back


def layer_gradients(net: GReluNetwork, gates: GatePattern, ds: Dataset,
                    deterministic=False):
    """Gradients of the loss for every trained layer plus the loss itself.

    ``grad_k = sum_i F_{k+1}^{i T} r_i (G_{k-1}^i x_i)^T`` with ``r_i`` the
    residual of example i.
    """
    R, hidden = residuals(net, gates, ds)
    back = backprop_signals(net, gates.masks, R)
    grads = [_accumulate(back[k], hidden[k - 1], deterministic)
             for k in range(1, net.shape.L + 1)]
    return grads, 0.5 * float(np.sum(np.sum(R * R, axis=1)))


def layer_gradient(net, gates, ds, k: int, deterministic=False) -> np.ndarray:
    """Gradient with respect to ``W_k``, ``1 <= k <= L``."""
    if not 1 <= k <= net.shape.L:
        raise IndexError(f"layer index must lie in 1..{net.shape.L}, got {k}")
    R, hidden = residuals(net, gates, ds)
    back = backprop_signals(net, gates.masks, R)
    return _accumulate(back[k], hidden[k - 1], deterministic)


def relu_layer_gradients(relu: ReluNetwork, ds: Dataset, deterministic=False):
    """Subgradients of the ReLU-network loss, plus loss and current masks."""
    _check(relu, None, ds)
    out, pre, masks = relu_forward(relu, ds.X)
    R = out - ds.Y
    L = relu.shape.L
    post = [np.maximum(z, 0.0) for z in pre]
    g = R @ relu.B
    if relu.output_relu:
        g = g * masks[:, L]
    grads = [None] * L
    for k in range(L, 0, -1):
        grads[k - 1] = _accumulate(g, post[k - 1], deterministic)
        g = (g @ relu.W[k - 1]) * masks[:, k - 1]
    return grads, 0.5 * float(np.sum(np.sum(R * R, axis=1))), masks


def theoretical_lr(shape: NetworkShape, n: int) -> float:
    """Learning rate ``d_x / (n^4 L^3 d_y)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return shape.d_x / (float(n) ** 4 * float(shape.L) ** 3 * shape.d_y)


# ---------------------------------------------------------------- logging


class TrainRow(NamedTuple):
    iter: int
    loss: float
    grad_norm: float
    grad_tdiff: float
    tau: float
    eta: float
    wall_ms: float
    hamming: float | None = None


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    status: str = "running"
    with_hamming: bool = False

    def append(self, row: TrainRow):
        if self.rows and row.iter <= self.rows[-1].iter:
            raise ContractError("log iterations must strictly increase")
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    @property
    def losses(self):
        return self.column("loss")

    @property
    def header(self):
        cols = list(CSV_COLUMNS)
        if self.with_hamming:
            cols.append("hamming")
        return cols

    def to_csv(self, fh=None, deterministic=False) -> str:
        """Write the log; returns the text. ``deterministic`` zeroes wall-clock."""
        buf = io.StringIO()
        if self.meta:
            buf.write("# " + " ".join(f"{k}={v}" for k, v in self.meta.items()) + "\n")
        buf.write(",".join(self.header) + "\n")
        for r in self.rows:
            vals = [str(r.iter), fmt(r.loss), fmt(r.grad_norm), fmt(r.grad_tdiff),
                    fmt(r.tau), fmt(r.eta), fmt(0.0 if deterministic else r.wall_ms)]
            if self.with_hamming:
                vals.append(fmt(r.hamming if r.hamming is not None else float("nan")))
            buf.write(",".join(vals) + "\n")
        text = buf.getvalue()
        if fh is not None:
            if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
                with open(fh, "w", newline="") as out:
                    out.write(text)
            else:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "TrainLog":
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source) as fh:
                text = fh.read()
        lines = text.splitlines()
        meta = {}
        while lines and lines[0].startswith("#"):
            for tok in lines.pop(0)[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    meta[key] = val
        reader = csv.DictReader(lines)
        log = cls(meta=meta, with_hamming="hamming" in (reader.fieldnames or []))
        for rec in reader:
            log.rows.append(TrainRow(
                int(rec["iter"]), float(rec["loss"]), float(rec["grad_norm"]),
                float(rec["grad_tdiff"]), float(rec["tau"]), float(rec["eta"]),
                float(rec["wall_ms"]),
                float(rec["hamming"]) if log.with_hamming else None))
        return log


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    """Gradient-descent settings.

    ``eta`` is a positive float or ``"theoretical"``; ``target_loss`` is an
    absolute loss threshold. ``max_iters = 0`` evaluates the initial point only.
    """

    eta: float | str = "theoretical"
    max_iters: int = 1000
    target_loss: float = 0.0
    arch: str = "grelu"
    seed: int = 0
    log_every: int = 1
    deterministic_reduction: bool = True
    track_hamming: bool = False
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.target_loss < 0:
            raise ValueError("target_loss must be non-negative")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.arch not in ("grelu", "relu"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if isinstance(self.eta, str):
            if self.eta != "theoretical":
                raise ValueError("eta must be a number or 'theoretical'")
        elif self.eta < 0:
            raise ValueError("eta must be non-negative")

    def resolve_eta(self, shape: NetworkShape, n: int) -> float:
        return theoretical_lr(shape, n) if self.eta == "theoretical" else float(self.eta)


def _flat_norm(mats):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in mats)))


def train(net, ds: Dataset, cfg: TrainConfig, gates: GatePattern | None = None,
          callback=None):
    """Full-batch gradient descent; returns ``(final_net, TrainLog)``.

    All layers are updated simultaneously from gradients taken at the current
    weights. Stops once ``loss <= cfg.target_loss`` (status ``"converged"``)
    or after ``cfg.max_iters`` updates (``"exhausted"``). Raises
    ``DivergenceError`` when the loss exceeds ``divergence_factor`` times its
    initial value or becomes non-finite.

    ``tau`` (largest spectral-norm drift of any layer from its starting
    value) is refreshed at log points only. ``callback(t, net)`` is invoked
    at every log point.
    """
    is_relu = isinstance(net, ReluNetwork)
    if is_relu != (cfg.arch == "relu"):
        raise ContractError(f"config arch {cfg.arch!r} does not match network type")
    if not is_relu:
        if gates is None:
            gates = compute_gates(net, ds.X)
        _check(net, gates, ds)
    else:
        _check(net, None, ds)

    eta = cfg.resolve_eta(net.shape, ds.n)
    det = cfg.deterministic_reduction
    with_hamming = is_relu or cfg.track_hamming
    log = TrainLog(meta={"arch": cfg.arch, "lr": cfg.eta, "eta": fmt(eta),
                         "m": net.shape.m, "L": net.shape.L, "n": ds.n},
                   with_hamming=with_hamming)
    W0 = net.W
    tau = 0.0
    prev_grad = None
    prev_masks = None
    loss0 = None
    start = time.perf_counter()

    t = 0
    while True:
        if is_relu:
            grads, cur_loss, masks = relu_layer_gradients(net, ds, det)
        else:
            grads, cur_loss = layer_gradients(net, gates, ds, det)
            masks = None
        if loss0 is None:
            loss0 = cur_loss
        if not np.isfinite(cur_loss) or cur_loss > cfg.divergence_factor * max(loss0, 1e-300):
            log.status = "diverged"
            raise DivergenceError(f"loss {cur_loss:.3e} at iteration {t} exceeds "
                                  f"{cfg.divergence_factor:g} x initial loss {loss0:.3e}",
                                  log=log, net=net)
        tdiff = (float("nan") if prev_grad is None
                 else _flat_norm([g - p for g, p in zip(grads, prev_grad)]))

        done = cur_loss <= cfg.target_loss
        last = done or t >= cfg.max_iters
        if t % cfg.log_every == 0 or last:
            if t > 0:
                tau = max(tau, max(spectral_norm(w - w0) for w, w0 in zip(net.W, W0)))
            hamming = None
            if is_relu:
                hamming = 0.0 if prev_masks is None else float(np.mean(masks != prev_masks))
            elif cfg.track_hamming:
                now = compute_gates(net, ds.X)
                hamming = float(np.mean(now.masks != gates.masks))
            log.append(TrainRow(t, cur_loss, _flat_norm(grads), tdiff, tau, eta,
                                (time.perf_counter() - start) * 1e3, hamming))
            if callback is not None:
                callback(t, net)
        if last:
            log.status = "converged" if done else "exhausted"
            return net, log

        prev_grad = grads
        prev_masks = masks
        net = net.with_weights([w - eta * g for w, g in zip(net.W, grads)])
        t += 1


def mask_disagreement(masks_a, masks_b) -> float:
    """Fraction of positions where two boolean mask arrays differ."""
    masks_a, masks_b = np.asarray(masks_a, bool), np.asarray(masks_b, bool)
    if masks_a.shape != masks_b.shape:
        raise DimensionError("mask arrays differ in shape")
    return float(np.mean(masks_a != masks_b))


def hamming_activation_drift(net_a, net_b, ds: Dataset) -> float:
    """Mean fraction of gates that differ between two networks on ``ds``.

    Works for ReLU networks (own activation patterns) and GReLU networks
    (fixed gates, hence always 0 for nets sharing ``C`` and ``Psi``).
    """
    if net_a.shape != net_b.shape or type(net_a) is not type(net_b):
        raise DimensionError("networks must have the same type and shape")
    if isinstance(net_a, ReluNetwork):
        ma = relu_forward(net_a, ds.X)[2]
        mb = relu_forward(net_b, ds.X)[2]
    else:
        ma = compute_gates(net_a, ds.X).masks
        mb = compute_gates(net_b, ds.X).masks
    return mask_disagreement(ma, mb)
