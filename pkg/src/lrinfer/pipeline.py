"""Debiasing and diversified projection.

``run_pipeline`` chains the initial estimator, the first correction ``B1``,
the diversified factor estimates, the projection, the noise variance
estimate and the second correction ``B2``:

    M_naive = M_init - B1
    beta_t  = M_naive W_F / T,   F_t = M_naive' W_beta / N
    M_proj  = P(beta_t) M_naive P(F_t)
    M_hat   = M_proj - B2
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LrinferWarning, ValidationError
from .linalg import gram_pinv, numerical_rank, projector
from .nuclear import InitEstimate, NuclearConfig, build_init
from .panel import GroupSpec, HeterogeneityWeights, ObservedPanel, compute_heterogeneity
from .weights import DiversifiedWeights


@dataclass(frozen=True)
class PipelineConfig:
    nuclear: NuclearConfig = NuclearConfig()
    ablate_B2: bool = False
    force_sigma0: bool = False


@dataclass
class FitResult:
    M_init: np.ndarray
    B1: np.ndarray
    M_naive: np.ndarray
    beta_tilde: np.ndarray
    F_tilde: np.ndarray
    M_proj: np.ndarray
    B2: np.ndarray
    M_hat: np.ndarray
    sigma2_tilde: float
    ablation_no_B2: bool = False
    hw: HeterogeneityWeights | None = None
    init: InitEstimate | None = field(default=None, repr=False)

    def summary(self) -> dict:
        init = self.init
        return {
            "sigma2_tilde": self.sigma2_tilde,
            "lambda": None if init is None else init.lambda_used,
            "solver_iters": None if init is None else list(init.solver_iters),
            "rank_beta_tilde": numerical_rank(self.beta_tilde),
            "rank_F_tilde": numerical_rank(self.F_tilde),
            "rank_M_proj": int(_rank(self.M_proj)),
            "R": int(self.beta_tilde.shape[1]),
            "ablation_no_B2": self.ablation_no_B2,
            "p_min": None if self.hw is None else self.hw.p_min,
        }

    def save(self, directory) -> Path:
        """Write every matrix as ``.npy`` plus ``fit.json`` pointing to them."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name in ("M_init", "B1", "M_naive", "beta_tilde", "F_tilde", "M_proj", "B2", "M_hat"):
            p = directory / f"{name}.npy"
            np.save(p, getattr(self, name))
            paths[name] = p.name
        doc = {**self.summary(), "matrices": paths}
        out = directory / "fit.json"
        out.write_text(json.dumps(doc, indent=2))
        return out


def _rank(M, rtol: float = 1e-8) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0


def _check_shapes(panel: ObservedPanel, *mats):
    for M in mats:
        if np.shape(M) != panel.shape:
            raise ValidationError(f"matrix shape {np.shape(M)} does not match panel {panel.shape}")


def bias1(panel: ObservedPanel, hw: HeterogeneityWeights, M_init) -> np.ndarray:
    """``B1 = Pi^-1 X o (X o M_init - Y)``."""
    _check_shapes(panel, M_init)
    X = panel.X
    return X * (X * M_init - panel.Y) / hw.p_hat[:, None]


def diversified_factors(M_naive, w: DiversifiedWeights) -> tuple[np.ndarray, np.ndarray]:
    M_naive = np.asarray(M_naive, dtype=float)
    N, T = M_naive.shape
    if w.W_beta.shape[0] != N or w.W_F.shape[0] != T:
        raise ValidationError(
            f"weights have {w.W_beta.shape[0]} and {w.W_F.shape[0]} rows, matrix is {N}x{T}"
        )
    return M_naive @ w.W_F / T, M_naive.T @ w.W_beta / N


def project(M_naive, beta_tilde, F_tilde) -> np.ndarray:
    """``P(beta_tilde) M_naive P(F_tilde)`` with rank-tolerant projectors."""
    P_b = projector(beta_tilde)
    P_f = projector(F_tilde)
    if not P_b.any() and not P_f.any():
        warnings.warn("both diversified factor estimates are zero; projection is zero",
                      LrinferWarning, stacklevel=2)
    return P_b @ np.asarray(M_naive, dtype=float) @ P_f


def estimate_sigma2(panel: ObservedPanel, M_init) -> float:
    """Residual variance from the initial estimator.

    General regressors average over all ``NT`` cells; a binary mask averages
    over the observed cells only.
    """
    _check_shapes(panel, M_init)
    rss = float(np.sum((panel.Y - panel.X * M_init) ** 2))
    if panel.is_binary:
        n_obs = float(panel.X.sum())
        if n_obs == 0:
            raise ValidationError("no observed cells")
        return rss / n_obs
    return rss / (panel.N * panel.T)


def bias2(w: DiversifiedWeights, hw: HeterogeneityWeights, beta_tilde, F_tilde, sigma2: float) -> np.ndarray:
    """Second correction for the ridge-type bias of over-specified projections.

    ``sigma2 * [T/N P_b Pi^-1 W_beta (F'F)^+ F' + N/T b (b'b)^+ W_F' Psi P_F]``
    with ``b = beta_tilde``, ``F = F_tilde`` and rank-tolerant inverses.
    """
    beta_tilde = np.asarray(beta_tilde, dtype=float)
    F_tilde = np.asarray(F_tilde, dtype=float)
    N, R = beta_tilde.shape
    T = F_tilde.shape[0]
    if sigma2 == 0:
        return np.zeros((N, T))
    for name, A in (("beta_tilde", beta_tilde), ("F_tilde", F_tilde)):
        k = numerical_rank(A)
        if k < R:
            warnings.warn(f"{name} has numerical rank {k} < R={R}; using pseudo-inverse",
                          LrinferWarning, stacklevel=2)
    P_b = projector(beta_tilde)
    P_f = projector(F_tilde)
    left = (T / N) * (P_b @ (w.W_beta / hw.p_hat[:, None])) @ gram_pinv(F_tilde) @ F_tilde.T
    right = (N / T) * (beta_tilde @ gram_pinv(beta_tilde) @ (w.W_F.T * hw.psi_hat)) @ P_f
    return sigma2 * (left + right)


def run_pipeline(
    panel: ObservedPanel,
    w: DiversifiedWeights,
    group: GroupSpec,
    cfg: PipelineConfig = PipelineConfig(),
    hw: HeterogeneityWeights | None = None,
    init: InitEstimate | None = None,
) -> FitResult:
    """Full estimation: initial estimate, both corrections and the projection.

    A precomputed ``init`` (which does not depend on the weights) may be
    passed to evaluate several weight choices on the same data.
    """
    if w.W_beta.shape[0] != panel.N or w.W_F.shape[0] != panel.T:
        raise ValidationError(
            f"weights have {w.W_beta.shape[0]} and {w.W_F.shape[0]} rows, panel is {panel.N}x{panel.T}"
        )
    if hw is None:
        hw = compute_heterogeneity(panel)
    if init is None:
        init = build_init(panel, hw, group, cfg.nuclear, rank=w.R)
    M_init = init.M_init
    B1 = bias1(panel, hw, M_init)
    M_naive = M_init - B1
    beta_t, F_t = diversified_factors(M_naive, w)
    M_proj = project(M_naive, beta_t, F_t)
    sigma2 = 0.0 if cfg.force_sigma0 else estimate_sigma2(panel, M_init)
    B2 = bias2(w, hw, beta_t, F_t, sigma2)
    M_hat = M_proj if cfg.ablate_B2 else M_proj - B2
    return FitResult(
        M_init=M_init,
        B1=B1,
        M_naive=M_naive,
        beta_tilde=beta_t,
        F_tilde=F_t,
        M_proj=M_proj,
        B2=B2,
        M_hat=M_hat,
        sigma2_tilde=sigma2,
        ablation_no_B2=cfg.ablate_B2,
        hw=hw,
        init=init,
    )
