"""Datasets: synthetic Ackley-style regression, separation, binary and CSV I/O."""
from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, InputError
from .linalg import RngStream

MAGIC = b"GRND"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQd")

LOG_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    """Unit-norm inputs ``X`` (n, d_x) and targets ``Y`` (n, d_y).

    ``label_scale`` is the factor the raw labels were divided by.
    """

    X: np.ndarray
    Y: np.ndarray
    label_scale: float = 1.0

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        Y = np.array(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise DimensionError(f"inconsistent dataset shapes X{X.shape} Y{Y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InputError("dataset contains non-finite values")
        if X.shape[0] and np.any(np.abs(np.linalg.norm(X, axis=1) - 1.0) > 1e-9):
            raise InputError("dataset rows must be unit-norm; use normalize_rows first")
        if not self.label_scale > 0:
            raise InputError("label_scale must be positive")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d_x(self):
        return self.X.shape[1]

    @property
    def d_y(self):
        return self.Y.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.label_scale)


def normalize_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InputError("cannot normalize an all-zero row")
    return X / norms


def ackley_labels(X) -> np.ndarray:
    """Raw labels of the complex Ackley variant, one per row of ``X``.

    ``y = sum_j x[(d - j - 2) mod d] * (log|x_j| (cos x_j + x_j^3 sin x_j) + sqrt|x_j|)``
    with 0-based ``j``; the multiplier index wraps circularly. Magnitudes
    below ``1e-12`` are floored inside the log only.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    j = np.arange(d)
    partner = X[:, (d - j - 2) % d]
    ax = np.abs(X)
    term = np.log(np.maximum(ax, LOG_FLOOR)) * (np.cos(X) + X**3 * np.sin(X)) + np.sqrt(ax)
    return np.sum(partner * term, axis=1)


def gen_ackley(n: int, d: int, seed: int) -> Dataset:
    """Gaussian inputs normalized to the unit sphere, labels scaled to ``max|y| = 1``."""
    if n < 1 or d < 1:
        raise DimensionError("n and d must be >= 1")
    X = normalize_rows(RngStream(seed, 0).generator().standard_normal((n, d)))
    y = ackley_labels(X)
    scale = float(np.max(np.abs(y)))
    if scale == 0.0:
        scale = 1.0
    return Dataset(X, (y / scale)[:, None], scale)


def check_separation(ds: Dataset) -> float:
    """``max_{i != j} |x_i . x_j|``."""
    if ds.n < 2:
        warnings.warn("separation needs at least two examples; returning 0", stacklevel=2)
        return 0.0
    gram = np.abs(ds.X @ ds.X.T)
    np.fill_diagonal(gram, 0.0)
    return float(min(gram.max(), 1.0))


# ---------------------------------------------------------------- I/O


def dataset_bytes(ds: Dataset) -> bytes:
    head = _HEADER.pack(MAGIC, VERSION, ds.n, ds.d_x, ds.d_y, float(ds.label_scale))
    return head + ds.X.astype("<f8").tobytes() + ds.Y.astype("<f8").tobytes()


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def parse_dataset(buf: bytes) -> Dataset:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic, expected GRND", 0)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, version, n, d_x, d_y, scale = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    off = _HEADER.size
    sizes = (n * d_x, n * d_y)
    arrays = []
    for count in sizes:
        end = off + 8 * count
        if len(buf) < end:
            raise FormatError("truncated data block", len(buf))
        arrays.append(np.frombuffer(buf, dtype="<f8", count=count, offset=off))
        off = end
    if len(buf) != off:
        raise FormatError("trailing bytes after data", off)
    X = arrays[0].reshape(n, d_x).astype(np.float64)
    Y = arrays[1].reshape(n, d_y).astype(np.float64)
    return Dataset(X, Y, scale)


def load_dataset(path) -> Dataset:
    return parse_dataset(Path(path).read_bytes())


def load_csv(path, normalize=True) -> Dataset:
    """Import a CSV whose header names columns ``x0..x{d-1}`` and ``y0..``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [[float(v) for v in row] for row in reader if row]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    if not xcols or not ycols or len(xcols) + len(ycols) != len(header):
        raise FormatError("CSV header must consist of x<i> and y<j> columns")
    xcols.sort(key=lambda i: int(header[i][1:]))
    ycols.sort(key=lambda i: int(header[i][1:]))
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    X = data[:, xcols]
    if normalize:
        X = normalize_rows(X)
    return Dataset(X, data[:, ycols])


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.d_x)] + [f"y{j}" for j in range(ds.d_y)])
        for x, y in zip(ds.X, ds.Y):
            w.writerow([repr(float(v)) for v in np.concatenate([x, y])])
