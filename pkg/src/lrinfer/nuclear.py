"""Weighted nuclear-norm penalized estimation and the merged initial estimator.

The solver minimizes

    1/2 * sum_{(j,s) included} (Y_js - X_js M_js)^2 / p_j  +  lam * ||M||_*

by monotone accelerated proximal gradient (FISTA with a restart whenever the
objective would increase).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import LrinferWarning, SolverError, ValidationError
from .linalg import svt_with_values, thin_svd
from .panel import GroupSpec, HeterogeneityWeights, ObservedPanel

log = logging.getLogger(__name__)

LAMBDA_MIN = 1e-12


@dataclass(frozen=True)
class NuclearConfig:
    lam: float | str = "auto"
    max_iters: int = 2000
    tol: float = 1e-7
    lambda_const: float = 0.5
    warm_start: bool = True

    def __post_init__(self):
        if isinstance(self.lam, str):
            if self.lam != "auto":
                raise ValidationError(f"lambda must be positive or 'auto', got {self.lam!r}")
        elif not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValidationError(f"lambda must be positive, got {self.lam}")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be positive")
        if not 0 < self.tol < 1:
            raise ValidationError("tol must lie in (0, 1)")
        if not self.lambda_const > 0:
            raise ValidationError("lambda_const must be positive")


@dataclass
class SolverResult:
    M: np.ndarray
    lam: float
    iters: int
    converged: bool
    objective_trace: np.ndarray


@dataclass
class InitEstimate:
    M_full: np.ndarray
    M_rest: np.ndarray
    M_init: np.ndarray
    lambda_used: float
    solver_iters: tuple[int, int]
    objective_trace: np.ndarray
    rest_mask: np.ndarray = field(repr=False)


class _WeightedLoss:
    """Smooth part of the objective restricted to the included cells."""

    def __init__(self, panel: ObservedPanel, hw: HeterogeneityWeights, include):
        include = np.broadcast_to(np.asarray(include, dtype=bool), panel.shape)
        self.Y, self.X = panel.Y, panel.X
        self.w = include / hw.p_hat[:, None]
        self.curv = self.w * self.X**2
        self.lin = self.w * self.X * self.Y
        self.L = float(self.curv.max())

    def value(self, M):
        r = self.Y - self.X * M
        return 0.5 * float(np.sum(self.w * r * r))

    def grad(self, M):
        return self.curv * M - self.lin


def _check_lam(lam) -> float:
    if isinstance(lam, str) or not (lam >= 0 and math.isfinite(lam)):
        raise ValidationError(f"lambda must be a finite non-negative number, got {lam!r}")
    return float(lam)


def solve_weighted_nuclear(
    panel: ObservedPanel,
    hw: HeterogeneityWeights,
    include,
    lam: float,
    cfg: NuclearConfig = NuclearConfig(),
    init=None,
) -> SolverResult:
    """Run the monotone accelerated proximal gradient solver.

    The step size is ``1/L`` with ``L`` the largest curvature
    ``X_js^2 / p_j`` over included cells. Iteration stops when the relative
    objective change drops below ``cfg.tol``; hitting ``cfg.max_iters`` emits
    a warning carrying the duality gap of the returned point.
    """
    lam = _check_lam(lam)
    loss = _WeightedLoss(panel, hw, include)
    if loss.L <= 0:
        raise SolverError("degenerate problem: X is zero on every included cell")
    L, tau = loss.L, lam / loss.L

    def prox_step(Z):
        M, s = svt_with_values(Z - loss.grad(Z) / L, tau)
        return M, loss.value(M) + lam * float(s.sum())

    x = np.zeros(panel.shape) if init is None else np.array(init, dtype=float)
    fx = loss.value(x) + lam * float(np.linalg.svd(x, compute_uv=False).sum())
    trace = [fx]
    y, t = x, 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        z, fz = prox_step(y)
        if fz > fx:
            # restart from the last accepted iterate; a plain prox-gradient
            # step from x cannot increase the objective (up to rounding)
            t = 1.0
            z, fz = prox_step(x)
            if fz > fx:
                z, fz = x, fx
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - x)
        t = t_next
        change = (fx - fz) / max(abs(fx), 1e-300)
        x, fx = z, fz
        trace.append(fx)
        if change < cfg.tol:
            converged = True
            break
    log.debug("nuclear solver: %d iterations, objective %.10g", it, fx)
    if not converged:
        gap = duality_gap(panel, hw, include, lam, x)
        warnings.warn(
            f"nuclear solver hit max_iters={cfg.max_iters}; final duality gap {gap:.3g}",
            LrinferWarning,
            stacklevel=2,
        )
    return SolverResult(x, lam, it, converged, np.array(trace))


def fit_weighted_nuclear(panel, hw, include, cfg: NuclearConfig, lam: float | None = None, init=None):
    """Approximate minimizer of the weighted nuclear-norm problem on ``include``."""
    if lam is None:
        lam = cfg.lam if cfg.lam != "auto" else auto_lambda(panel, hw, cfg)
    return solve_weighted_nuclear(panel, hw, include, lam, cfg, init).M


def objective(panel, hw, include, lam, M) -> float:
    loss = _WeightedLoss(panel, hw, include)
    return loss.value(M) + lam * float(np.linalg.svd(M, compute_uv=False).sum())


def duality_gap(panel, hw, include, lam, M) -> float:
    """Primal objective at ``M`` minus a Fenchel dual lower bound.

    The dual point is the loss gradient at ``M`` rescaled into the
    operator-norm ball of radius ``lam``. Always >= 0 up to rounding.
    """
    loss = _WeightedLoss(panel, hw, include)
    G = loss.grad(M)
    gnorm = float(np.linalg.norm(G, 2)) if G.any() else 0.0
    U = G * (min(1.0, lam / gnorm) if gnorm > 0 else 1.0)
    # conjugate of a -> 1/2 w (y - x a)^2 at u is u y / x + u^2 / (2 w x^2)
    active = loss.curv > 0
    ua = U[active]
    xa, ya = loss.X[active], loss.Y[active]
    conj = float(np.sum(ua * ya / xa + ua**2 / (2 * loss.curv[active])))
    return objective(panel, hw, include, lam, M) + conj


def kkt_residual(panel, hw, include, lam, M, rank_rtol: float = 1e-6) -> dict:
    """Nuclear-norm optimality residuals at ``M``.

    ``support`` is ``||U'GV + lam I||_max`` on the numerical row/column space
    of ``M``; ``off_support`` is ``sigma_max`` of ``G`` projected onto the
    orthocomplements, which optimality bounds by ``lam``.
    """
    G = _WeightedLoss(panel, hw, include).grad(M)
    svd = thin_svd(M)
    s1 = svd.s[0] if svd.s.size else 0.0
    k = int(np.sum(svd.s > rank_rtol * s1)) if s1 > 0 else 0
    U, V = svd.U[:, :k], svd.V[:, :k]
    if k:
        support = float(np.abs(U.T @ G @ V + lam * np.eye(k)).max())
    else:
        support = 0.0
    Gp = G - U @ (U.T @ G)
    Gp = Gp - (Gp @ V) @ V.T
    off = float(np.linalg.norm(Gp, 2))
    return {
        "rank": k,
        "support": support,
        "off_support": off,
        "residual": max(support, max(0.0, off - lam)),
    }


def auto_lambda(panel: ObservedPanel, hw: HeterogeneityWeights, cfg: NuclearConfig = NuclearConfig()) -> float:
    """``c * sd(observed Y) * (sqrt N + sqrt T) * max_j p_j^{-1/2}``."""
    obs = panel.Y[panel.X != 0]
    if obs.size < 2:
        raise ValidationError("auto lambda needs at least two cells with X != 0")
    sd = float(np.std(obs, ddof=1))
    lam = cfg.lambda_const * sd * (math.sqrt(panel.N) + math.sqrt(panel.T)) * float(np.max(hw.p_hat ** -0.5))
    if lam < LAMBDA_MIN:
        warnings.warn(
            f"auto lambda {lam:.3g} below {LAMBDA_MIN:g} (constant outcomes?); using {LAMBDA_MIN:g}",
            LrinferWarning,
            stacklevel=2,
        )
        lam = LAMBDA_MIN
    return lam


def resolve_lambda(panel, hw, cfg: NuclearConfig) -> float:
    return auto_lambda(panel, hw, cfg) if cfg.lam == "auto" else float(cfg.lam)


def build_init(
    panel: ObservedPanel,
    hw: HeterogeneityWeights,
    group: GroupSpec,
    cfg: NuclearConfig = NuclearConfig(),
    rank: int = 1,
) -> InitEstimate:
    """Full-sample fit, restricted fit outside the group, and their merge.

    The restricted fit uses only cells outside the group's rows and columns
    (block), outside its rows (serial) or outside its columns
    (cross-sectional). The merged estimate takes the restricted value on
    those cells and the full-sample value elsewhere.
    """
    if group.shape != panel.shape:
        raise ValidationError(f"group is for shape {group.shape}, panel is {panel.shape}")
    rest = group.restricted_mask()
    live = rest & (panel.X != 0)
    n_rows = int(live.any(axis=1).sum())
    n_cols = int(live.any(axis=0).sum())
    if n_rows < rank + 1 or n_cols < rank + 1:
        raise ValidationError(
            f"group too large: the restricted sample keeps {n_rows} rows and {n_cols} cols "
            f"with data, need at least {rank + 1} of each"
        )
    lam = resolve_lambda(panel, hw, cfg)
    full = solve_weighted_nuclear(panel, hw, True, lam, cfg)
    restricted = solve_weighted_nuclear(
        panel, hw, rest, lam, cfg, init=full.M if cfg.warm_start else None
    )
    M_rest = np.where(rest, restricted.M, 0.0)
    M_init = np.where(rest, M_rest, full.M)
    return InitEstimate(
        M_full=full.M,
        M_rest=M_rest,
        M_init=M_init,
        lambda_used=lam,
        solver_iters=(full.iters, restricted.iters),
        objective_trace=full.objective_trace,
        rest_mask=rest,
    )


def singular_values(M) -> np.ndarray:
    return np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
