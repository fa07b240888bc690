"""Group averages, the plug-in variance estimator and normal confidence intervals."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import LrinferWarning, ValidationError
from .linalg import gram_pinv
from .panel import GroupKind, GroupSpec, HeterogeneityWeights, ObservedPanel
from .pipeline import FitResult
from .weights import DiversifiedWeights


@dataclass(frozen=True)
class InferenceResult:
    estimate: float
    variance: float
    std_error: float
    z_stat: float
    ci_lower: float
    ci_upper: float
    level: float
    group: GroupSpec
    null_value: float = 0.0
    flags: tuple[str, ...] = field(default=())

    @property
    def p_two_sided(self) -> float:
        return float(2 * norm.sf(abs(self.z_stat)))

    @property
    def p_one_sided(self) -> float:
        """p-value against ``H0: mean <= null_value``."""
        return float(norm.sf(self.z_stat))

    def covers(self, value: float) -> bool:
        return self.ci_lower <= value <= self.ci_upper

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "variance": self.variance,
            "se": self.std_error,
            "z": _json_float(self.z_stat),
            "p_one_sided": self.p_one_sided,
            "p_two_sided": self.p_two_sided,
            "ci": [self.ci_lower, self.ci_upper],
            "level": self.level,
            "null_value": self.null_value,
            "group": self.group.to_json(),
            "flags": list(self.flags),
        }


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def normal_quantile(level: float) -> float:
    return float(norm.ppf((1 + level) / 2))


def group_average(M, group: GroupSpec) -> float:
    M = np.asarray(M, dtype=float)
    if M.shape != group.shape:
        raise ValidationError(f"matrix shape {M.shape} does not match group shape {group.shape}")
    return float(M[np.ix_(group.rows, group.cols)].mean())


def _variance_formula(fit: FitResult, panel: ObservedPanel, hw: HeterogeneityWeights,
                      w: DiversifiedWeights, rows, cols) -> float:
    """Plug-in variance of the average of ``M_hat`` over ``rows x cols``.

    First term: noise entering through ``F_tilde`` (all units, periods in
    the group). Second term: noise entering through ``beta_tilde`` (units in
    the group, all periods).
    """
    rows, cols = list(rows), list(cols)
    N, T = panel.shape
    if not fit.beta_tilde.any() or not fit.F_tilde.any():
        raise ValidationError("diversified factor estimate is zero; variance undefined")
    s2 = fit.sigma2_tilde
    M = fit.M_hat
    X2 = panel.X**2
    m_rows = M[rows].mean(axis=0)            # length T
    m_cols = M[:, cols].mean(axis=1)         # length N
    a = m_rows @ fit.F_tilde @ gram_pinv(fit.F_tilde)        # length R
    b = m_cols @ fit.beta_tilde @ gram_pinv(fit.beta_tilde)  # length R
    aw = (w.W_beta @ a) / hw.p_hat                            # per unit j
    bw = w.W_F @ b                                            # per period s
    first = np.sum(aw**2 * X2[:, cols].sum(axis=1)) / (len(cols) ** 2 * N**2)
    second = np.sum((X2[rows] / hw.p_hat[rows, None] ** 2) @ bw**2) / (len(rows) ** 2 * T**2)
    return float(s2 * (first + second))


def variance_block(fit, panel, hw, w, group: GroupSpec) -> float:
    if group.kind is not GroupKind.BLOCK:
        raise ValidationError("variance_block needs a block group")
    return _variance_formula(fit, panel, hw, w, group.rows, group.cols)


def variance_group(fit, panel, hw, w, group: GroupSpec) -> tuple[float, tuple[str, ...]]:
    """Variance for any group kind, plus provenance flags.

    Serial and cross-sectional groups evaluate the block formula with the
    full column (resp. row) set and are flagged ``appendix-specialization``.
    """
    v = _variance_formula(fit, panel, hw, w, group.rows, group.cols)
    flags = () if group.kind is GroupKind.BLOCK else ("appendix-specialization",)
    return v, flags


def _result(estimate, variance, level, group, null_value, flags) -> InferenceResult:
    if not 0.5 < level < 1:
        raise ValidationError(f"level must lie in (0.5, 1), got {level}")
    se = math.sqrt(variance)
    diff = estimate - null_value
    if se > 0:
        z = diff / se
    elif diff == 0:
        z = 0.0
    else:
        z = math.copysign(math.inf, diff)
        warnings.warn("zero variance with estimate != null; z is infinite", LrinferWarning, stacklevel=3)
        flags = flags + ("zero-variance",)
    q = normal_quantile(level)
    return InferenceResult(
        estimate=estimate,
        variance=variance,
        std_error=se,
        z_stat=z,
        ci_lower=estimate - q * se,
        ci_upper=estimate + q * se,
        level=level,
        group=group,
        null_value=null_value,
        flags=flags,
    )


def infer(fit: FitResult, panel: ObservedPanel, hw: HeterogeneityWeights, w: DiversifiedWeights,
          group: GroupSpec, level: float = 0.95, null_value: float = 0.0) -> InferenceResult:
    """Normal confidence interval and z-statistic for the group average of ``M_hat``."""
    if not 0.5 < level < 1:
        raise ValidationError(f"level must lie in (0.5, 1), got {level}")
    estimate = group_average(fit.M_hat, group)
    variance, flags = variance_group(fit, panel, hw, w, group)
    if fit.ablation_no_B2:
        flags = flags + ("ablation-no-B2",)
    return _result(estimate, variance, level, group, null_value, flags)


def check_complementary(X1, X0) -> None:
    if np.shape(X1) != np.shape(X0) or not np.array_equal(np.asarray(X1) + np.asarray(X0), np.ones(np.shape(X1))):
        raise ValidationError("treated and control masks are not complementary (X1 + X0 != 1)")


def hte_infer(fit1: FitResult, fit0: FitResult, panel1: ObservedPanel, panel0: ObservedPanel,
              hw1: HeterogeneityWeights, hw0: HeterogeneityWeights, w: DiversifiedWeights,
              group: GroupSpec, level: float = 0.95, null_value: float = 0.0) -> InferenceResult:
    """Inference on the group average of ``M_hat(1) - M_hat(0)``.

    Both arms share the weights; their variances add.
    """
    check_complementary(panel1.X, panel0.X)
    if not 0.5 < level < 1:
        raise ValidationError(f"level must lie in (0.5, 1), got {level}")
    estimate = group_average(fit1.M_hat - fit0.M_hat, group)
    v1, flags = variance_group(fit1, panel1, hw1, w, group)
    v0, _ = variance_group(fit0, panel0, hw0, w, group)
    if fit1.ablation_no_B2 or fit0.ablation_no_B2:
        flags = flags + ("ablation-no-B2",)
    return _result(estimate, v1 + v0, level, group, null_value, flags)
