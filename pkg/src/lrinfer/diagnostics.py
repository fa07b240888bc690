"""Advisory checks of the observable model conditions.

Nothing here blocks estimation: every finding is returned as a structured
warning (and also emitted through :mod:`warnings`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import LrinferWarning, ValidationError
from .linalg import row_norm_max
from .panel import GroupSpec, ObservedPanel, compute_heterogeneity
from .weights import DiversifiedWeights, gram_min_sv

P_MIN_WARN = 0.05
GRAM_WARN = 1e-6
INCOHERENCE_WARN = 5.0
MAX_RATIOS = 10


@dataclass
class DiagnosticsReport:
    p_min: float
    weight_row_norm_max: float
    weight_gram_min_sv: float
    incoherence_ratios: tuple[float, float]
    eigenvalue_ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    block_shape_ratios: tuple[float, float] = (0.0, 0.0)
    warnings: list[dict] = field(default_factory=list)

    @property
    def rank_hint(self) -> int | None:
        """Position of the largest eigenvalue ratio (advisory only)."""
        if self.eigenvalue_ratios.size == 0:
            return None
        return int(np.argmax(self.eigenvalue_ratios)) + 1

    def to_json(self) -> dict:
        return {
            "p_min": self.p_min,
            "weight_row_norm_max": self.weight_row_norm_max,
            "weight_gram_min_sv": self.weight_gram_min_sv,
            "incoherence_ratios": list(self.incoherence_ratios),
            "eigenvalue_ratios": [float(x) for x in self.eigenvalue_ratios],
            "singular_values": [float(x) for x in self.singular_values],
            "rank_hint": self.rank_hint,
            "block_shape_ratios": list(self.block_shape_ratios),
            "warnings": list(self.warnings),
        }


def incoherence(A) -> float:
    """``||A||_{2,inf} * sqrt(n) / sigma_max(A)``; 1 for perfectly spread rows."""
    A = np.asarray(A, dtype=float)
    smax = float(np.linalg.norm(A, 2)) if A.any() else 0.0
    if smax == 0:
        return 0.0
    return row_norm_max(A) * np.sqrt(A.shape[0]) / smax


def eigenvalue_ratios(M, kmax: int = MAX_RATIOS) -> tuple[np.ndarray, np.ndarray]:
    """Singular values of ``M`` and the ratios ``s_j / s_{j+1}`` while ``s_{j+1} > 0``."""
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return s, np.zeros(0)
    tol = max(np.shape(M)) * np.finfo(float).eps * s[0]
    pos = s[s > tol]
    k = min(kmax, pos.size - 1)
    return s, pos[:k] / pos[1 : k + 1]


def _warn(out: list, code: str, message: str) -> None:
    out.append({"code": code, "message": message})
    warnings.warn(message, LrinferWarning, stacklevel=3)


def diagnose(panel: ObservedPanel, weights: DiversifiedWeights, group: GroupSpec, fit=None) -> DiagnosticsReport:
    N, T = panel.shape
    if weights.W_beta.shape[0] != N or weights.W_F.shape[0] != T:
        raise ValidationError(
            f"weights have {weights.W_beta.shape[0]} and {weights.W_F.shape[0]} rows, panel is {N}x{T}"
        )
    if group.shape != panel.shape:
        raise ValidationError(f"group is for shape {group.shape}, panel is {panel.shape}")
    found: list[dict] = []

    hw = fit.hw if fit is not None and fit.hw is not None else compute_heterogeneity(panel)
    p_min = hw.p_min
    if p_min < P_MIN_WARN:
        _warn(found, "p-min", f"smallest observation rate {p_min:.3g} is close to zero")

    row_max = max(row_norm_max(weights.W_beta), row_norm_max(weights.W_F))
    gram = min(gram_min_sv(weights.W_beta), gram_min_sv(weights.W_F))
    if gram < GRAM_WARN:
        _warn(found, "weight-gram", f"weight Gram matrix is near-singular (sigma_R = {gram:.3g})")

    if fit is not None:
        inc = (incoherence(fit.beta_tilde), incoherence(fit.F_tilde))
    else:
        inc = (incoherence(weights.W_beta), incoherence(weights.W_F))
    if max(inc) > INCOHERENCE_WARN:
        _warn(found, "incoherence", f"row norms are concentrated (ratios {inc[0]:.3g}, {inc[1]:.3g})")

    # polylog factors dropped and cluster size taken as 1
    n_rows, n_cols = len(group.rows), len(group.cols)
    shape_ratios = (
        n_rows**2 / N if n_rows < N else 0.0,
        n_cols**2 / N if n_cols < T else 0.0,
    )
    if max(shape_ratios) > 1:
        _warn(found, "block-shape",
              f"group looks large for the panel (|I|^2/N = {shape_ratios[0]:.3g}, |T|^2/N = {shape_ratios[1]:.3g})")

    s, ratios = (np.zeros(0), np.zeros(0)) if fit is None else eigenvalue_ratios(fit.M_init)
    return DiagnosticsReport(
        p_min=float(p_min),
        weight_row_norm_max=float(row_max),
        weight_gram_min_sv=float(gram),
        incoherence_ratios=(float(inc[0]), float(inc[1])),
        eigenvalue_ratios=ratios,
        singular_values=s,
        block_shape_ratios=(float(shape_ratios[0]), float(shape_ratios[1])),
        warnings=found,
    )
