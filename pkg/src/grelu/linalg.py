"""Dense real-matrix kernels used by every other module.

All matrices are 64-bit ``numpy`` arrays. Small problems go straight to
LAPACK; large spectral problems use Lanczos iteration from a fixed start
vector so results do not depend on any global random state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator, eigsh

from .errors import ContractError, DimensionError

# Above this size, extreme eigenvalues come from Lanczos instead of a full
# dense decomposition.
DENSE_LIMIT = 300

PINV_RCOND = 1e-10


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Two streams with different ids never share draws, and the same pair
    always reproduces the same sequence regardless of what else was drawn.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not 0 <= int(value) < 2**64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)


def gaussian_matrix(rows: int, cols: int, variance: float, rng: RngStream) -> np.ndarray:
    """Matrix of i.i.d. ``N(0, variance)`` entries drawn from ``rng``."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"matrix dimensions must be positive, got {rows}x{cols}")
    if not variance > 0:
        raise ValueError("variance must be strictly positive")
    draws = rng.generator().standard_normal((rows, cols))
    return draws * np.sqrt(variance)


def _start_vector(n: int) -> np.ndarray:
    # Deterministic and generically non-orthogonal to any eigenvector.
    v = 1.0 + 0.5 * np.sin(np.arange(1, n + 1) * 0.7548776662466927)
    return v / np.linalg.norm(v)


def _check_symmetric(A: np.ndarray) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-9 * scale:
        raise ContractError("matrix is not symmetric within tolerance")


def _lanczos_extreme(op, n: int, which: str) -> float:
    val = eigsh(op, k=1, which=which, v0=_start_vector(n), tol=1e-10,
                maxiter=50 * n, return_eigenvectors=False)
    return float(val[0])


def sym_eig_extremes(A) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    A = np.asarray(A, dtype=np.float64)
    _check_symmetric(A)
    n = A.shape[0]
    if n <= DENSE_LIMIT:
        w = np.linalg.eigvalsh(A)
        return float(w[0]), float(w[-1])
    lam_max = _lanczos_extreme(A, n, "LA")
    # Shift so the minimum becomes the dominant end of the spectrum.
    shift = abs(lam_max) + np.linalg.norm(A, np.inf)
    shifted = aslinearoperator(A) - shift * aslinearoperator(np.eye(n))
    lam_min = _lanczos_extreme(shifted, n, "LM") + shift
    return lam_min, lam_max


def spectral_norm(A) -> float:
    """Largest singular value. Accepts an array or a scipy ``LinearOperator``."""
    if isinstance(A, LinearOperator):
        rows, cols = A.shape
        if min(rows, cols) <= DENSE_LIMIT and max(rows, cols) <= 4 * DENSE_LIMIT:
            return spectral_norm(A @ np.eye(cols))
        gram = LinearOperator((cols, cols), matvec=lambda v: A.rmatvec(A.matvec(v)),
                              dtype=np.float64)
        lam = _lanczos_extreme(gram, cols, "LA")
        return float(np.sqrt(max(lam, 0.0)))

    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        return float(np.linalg.norm(A))
    if A.size == 0 or not np.any(A):
        return 0.0
    rows, cols = A.shape
    if min(rows, cols) <= DENSE_LIMIT:
        return float(np.linalg.norm(A, 2))
    if rows < cols:
        A = A.T
        rows, cols = cols, rows
    gram = LinearOperator((cols, cols), matvec=lambda v: A.T @ (A @ v), dtype=np.float64)
    lam = _lanczos_extreme(gram, cols, "LA")
    return float(np.sqrt(max(lam, 0.0)))


def min_norm_least_squares(A, B) -> np.ndarray:
    """Minimal-Frobenius-norm minimizer of ``||A X - B||_F``.

    Uses an SVD-based solver; singular values below ``1e-10 * sigma_max``
    are treated as zero.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"row mismatch: A is {A.shape}, B is {B.shape}")
    X, *_ = np.linalg.lstsq(A, B, rcond=PINV_RCOND)
    return X
