"""Diversified weighting matrices ``W_beta`` (N x R) and ``W_F`` (T x R).

Three constructors are provided: polynomial transformations of observed
characteristics, the same transformations applied to per-unit averages from
an extra sample, and truncated scaled singular vectors of a subsample.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import LrinferWarning, ValidationError
from .linalg import row_norm_max, thin_svd

GAMMA = 4.0
GRAM_WARN = 1e-6


class Provenance(str, enum.Enum):
    CHARACTERISTICS = "characteristics"
    SUBSAMPLE_AVERAGES = "subsample-averages"
    SCALED_SINGULAR_VECTORS = "scaled-singular-vectors"
    USER_SUPPLIED = "user-supplied"
    ORACLE_AUGMENTED = "oracle-augmented"


@dataclass(frozen=True)
class DiversifiedWeights:
    W_beta: np.ndarray
    W_F: np.ndarray
    provenance: Provenance = Provenance.USER_SUPPLIED

    def __post_init__(self):
        Wb = np.array(self.W_beta, dtype=float)
        Wf = np.array(self.W_F, dtype=float)
        if Wb.ndim == 1:
            Wb = Wb[:, None]
        if Wf.ndim == 1:
            Wf = Wf[:, None]
        if Wb.ndim != 2 or Wf.ndim != 2:
            raise ValidationError("weights must be matrices")
        if Wb.shape[1] != Wf.shape[1] or Wb.shape[1] < 1:
            raise ValidationError(
                f"W_beta has {Wb.shape[1]} columns but W_F has {Wf.shape[1]}; need a common R >= 1"
            )
        if not (np.all(np.isfinite(Wb)) and np.all(np.isfinite(Wf))):
            raise ValidationError("weights contain non-finite entries")
        Wb.flags.writeable = False
        Wf.flags.writeable = False
        object.__setattr__(self, "W_beta", Wb)
        object.__setattr__(self, "W_F", Wf)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def R(self) -> int:
        return self.W_beta.shape[1]

    def recombined(self, A, B) -> "DiversifiedWeights":
        """``(W_beta A, W_F B)``; spans are unchanged for invertible A, B."""
        return DiversifiedWeights(self.W_beta @ A, self.W_F @ B, self.provenance)


def _scale_columns(W: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms == 0):
        raise ValidationError("weight column with zero norm")
    return W * (np.sqrt(W.shape[0]) / norms)


def polynomial_features(Z, degree: int, include_constant: bool) -> np.ndarray:
    """Standardize each column, stack powers ``1..degree``, optionally prefix ones.

    Columns come out as ``[1, z1, z1^2, ..., z2, z2^2, ...]`` and are rescaled
    to l2-norm ``sqrt(n)``.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or not np.all(np.isfinite(Z)):
        raise ValidationError("characteristics must be a finite matrix")
    if degree < 1:
        raise ValidationError("degree must be at least 1")
    sd = Z.std(axis=0)
    flat = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(Z).max(axis=0)))
    if flat.size:
        raise ValidationError(
            f"characteristic column {flat[0] + 1} is constant; its powers are rank-deficient"
        )
    Zs = (Z - Z.mean(axis=0)) / sd
    cols = [np.ones(Z.shape[0])] if include_constant else []
    for k in range(Z.shape[1]):
        cols.extend(Zs[:, k] ** d for d in range(1, degree + 1))
    return _scale_columns(np.column_stack(cols))


def from_characteristics(Z, Ff, degree: int = 1, include_constant: bool = True) -> DiversifiedWeights:
    """Weights from unit characteristics ``Z`` (N x d) and time characteristics ``Ff`` (T x d')."""
    Z = np.asarray(Z, dtype=float)
    Ff = np.asarray(Ff, dtype=float)
    d = 1 if Z.ndim == 1 else Z.shape[1]
    d2 = 1 if Ff.ndim == 1 else Ff.shape[1]
    if d != d2:
        c = int(include_constant)
        raise ValidationError(
            f"rank mismatch: unit side gives R={c + d * degree}, time side gives R={c + d2 * degree}"
        )
    return DiversifiedWeights(
        polynomial_features(Z, degree, include_constant),
        polynomial_features(Ff, degree, include_constant),
        Provenance.CHARACTERISTICS,
    )


def subsample_averages(extra_Y, extra_X, side: str = "beta") -> np.ndarray:
    """Per-unit (``side='beta'``) or per-period (``side='F'``) ratio ``sum XY / sum X^2``."""
    Y = np.asarray(extra_Y, dtype=float)
    X = np.asarray(extra_X, dtype=float)
    if Y.shape != X.shape or Y.ndim != 2:
        raise ValidationError(f"extra Y {Y.shape} and X {X.shape} must be matching matrices")
    axis = {"beta": 1, "F": 0}.get(side)
    if axis is None:
        raise ValidationError(f"side must be 'beta' or 'F', got {side!r}")
    num = (X * Y).sum(axis=axis)
    den = (X**2).sum(axis=axis)
    empty = np.flatnonzero(den == 0)
    if empty.size:
        what = "subject" if side == "beta" else "period"
        raise ValidationError(f"{what} {empty[0] + 1} has no observations in the extra sample")
    return num / den


def from_subsample_averages(extra_Y, extra_X, side: str = "beta", degree: int = 1,
                            include_constant: bool = True) -> np.ndarray:
    """One side of the weights from polynomial transformations of subsample averages."""
    return polynomial_features(subsample_averages(extra_Y, extra_X, side), degree, include_constant)


def truncate_singular_vectors(U, gamma: float = GAMMA) -> np.ndarray:
    """``W_ik = sqrt(n) U_ik / max(1, sqrt(n)/gamma * max_i |U_ik|)``; every ``|W_ik| <= gamma``."""
    U = np.asarray(U, dtype=float)
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    root_n = np.sqrt(U.shape[0])
    scale = np.maximum(1.0, root_n / gamma * np.abs(U).max(axis=0))
    return root_n * U / scale


def from_scaled_singular_vectors(sub_Y, sub_X, R: int, gamma: float = GAMMA, side: str = "beta") -> np.ndarray:
    """One side of the weights from truncated top-R singular vectors of a subsample.

    The subsample must be disjoint from the inference sample; that is the
    caller's responsibility. Rows are scaled by their second moment of X
    before the SVD. ``side='beta'`` takes left singular vectors (length =
    number of subsample rows), ``side='F'`` right ones.
    """
    Y = np.asarray(sub_Y, dtype=float)
    X = np.asarray(sub_X, dtype=float)
    if Y.shape != X.shape or Y.ndim != 2:
        raise ValidationError("subsample Y and X must be matching matrices")
    if side not in ("beta", "F"):
        raise ValidationError(f"side must be 'beta' or 'F', got {side!r}")
    if R < 1 or R > min(Y.shape):
        raise ValidationError(f"R={R} exceeds subsample dimensions {Y.shape}")
    m2 = (X**2).mean(axis=1)
    if np.any(m2 == 0):
        raise ValidationError(f"subsample row {np.flatnonzero(m2 == 0)[0] + 1} has no observations")
    A = X * Y / m2[:, None]
    svd = thin_svd(A)
    tol = max(A.shape) * np.finfo(float).eps * 64 * (svd.s[0] if svd.s.size else 0.0)
    if svd.s.size < R or svd.s[R - 1] <= tol or svd.s[0] == 0:
        raise ValidationError(f"subsample matrix has rank below R={R}")
    U = svd.U[:, :R] if side == "beta" else svd.V[:, :R]
    return truncate_singular_vectors(U, gamma)


def combine(W_beta, W_F, provenance=Provenance.USER_SUPPLIED) -> DiversifiedWeights:
    return DiversifiedWeights(W_beta, W_F, provenance)


def gram_min_sv(W) -> float:
    """``sigma_R(n^-1 W'W)``."""
    W = np.asarray(W, dtype=float)
    return float(np.linalg.eigvalsh(W.T @ W / W.shape[0]).min().clip(min=0.0))


def validate_weights(w: DiversifiedWeights, N: int, T: int) -> dict:
    """Gram conditioning and row-norm bounds of both weight matrices."""
    if w.W_beta.shape[0] != N or w.W_F.shape[0] != T:
        raise ValidationError(
            f"weights have {w.W_beta.shape[0]} and {w.W_F.shape[0]} rows, panel is {N}x{T}"
        )
    out = {
        "gram_min_sv_beta": gram_min_sv(w.W_beta),
        "gram_min_sv_F": gram_min_sv(w.W_F),
        "row_norm_max_beta": row_norm_max(w.W_beta),
        "row_norm_max_F": row_norm_max(w.W_F),
        "warnings": [],
    }
    for side in ("beta", "F"):
        if out[f"gram_min_sv_{side}"] < GRAM_WARN:
            msg = f"W_{side} Gram is near-singular (sigma_R = {out[f'gram_min_sv_{side}']:.3g})"
            out["warnings"].append({"code": f"weight-gram-{side}", "message": msg})
            warnings.warn(msg, LrinferWarning, stacklevel=2)
    return out
