"""Dense linear-algebra kernels: thin SVD, rank-tolerant projectors and
pseudo-inverses, and singular value soft-thresholding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ThinSVD:
    """Top-k singular triplets, ``A ~= U @ diag(s) @ V.T``."""

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.V.T


def _check_finite(A: np.ndarray, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} contains non-finite entries")
    return A


def thin_svd(A, k: int | None = None) -> ThinSVD:
    """Thin SVD with a deterministic sign convention.

    In every column of ``U`` the entry of largest magnitude (lowest index on
    ties) is made non-negative; the matching column of ``V`` flips with it.
    """
    A = _check_finite(A)
    m, n = A.shape
    kmax = min(m, n)
    if k is None:
        k = kmax
    if k < 1 or k > kmax:
        raise ValidationError(f"k must lie in [1, {kmax}], got {k}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U, s, V = U[:, :k], s[:k], Vt[:k].T
    # argmax returns the first index on ties
    piv = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[piv, np.arange(k)] < 0, -1.0, 1.0)
    return ThinSVD(U * signs, s.copy(), V * signs)


def rank_tolerance(shape: tuple[int, int]) -> float:
    """Relative singular-value cutoff used by every rank-tolerant routine."""
    return max(shape) * np.finfo(float).eps * 64


def _kept_svd(B) -> ThinSVD:
    B = _check_finite(B, "B")
    svd = thin_svd(B)
    smax = svd.s[0] if svd.s.size else 0.0
    keep = svd.s > rank_tolerance(B.shape) * smax
    if smax == 0.0:
        keep[:] = False
    return ThinSVD(svd.U[:, keep], svd.s[keep], svd.V[:, keep])


def numerical_rank(B) -> int:
    return int(_kept_svd(B).s.size)


def projector(B) -> np.ndarray:
    """Orthogonal projector onto span(B).

    Singular values of ``B`` below ``rank_tolerance * sigma_max(B)`` are
    treated as zero, so rank-deficient ``B`` is handled without forming
    ``(B'B)^{-1}``. An all-zero ``B`` gives the zero projector.
    """
    U = _kept_svd(B).U
    P = U @ U.T
    return (P + P.T) / 2


def gram_pinv(B) -> np.ndarray:
    """Rank-tolerant pseudo-inverse of ``B'B`` computed from the SVD of ``B``."""
    svd = _kept_svd(B)
    return (svd.V / svd.s**2) @ svd.V.T


def svt(A, tau: float) -> np.ndarray:
    """Singular value soft-thresholding, the prox map of ``tau * ||.||_*``."""
    return svt_with_values(A, tau)[0]


def svt_with_values(A, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`svt` but also returns the shrunk singular values."""
    if tau < 0:
        raise ValidationError(f"threshold must be non-negative, got {tau}")
    svd = thin_svd(A)
    s = np.maximum(svd.s - tau, 0.0)
    keep = s > 0
    return (svd.U[:, keep] * s[keep]) @ svd.V[:, keep].T, s


def nuclear_norm(A) -> float:
    return float(np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False).sum())


def row_norm_max(A) -> float:
    """Largest row l2-norm, ``||A||_{2,inf}``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.sqrt((A**2).sum(axis=1)).max())
