"""Data-generating processes and a Monte Carlo coverage harness.

Randomness is split into independent streams with ``numpy.random.SeedSequence``:
the design (factors, loadings and weight columns) comes from ``seed`` alone,
while each replication's mask and noise come from ``(seed, rep)``. Results
therefore do not depend on how replications are scheduled across workers.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import LrinferError, LrinferWarning, ValidationError
from .inference import group_average, hte_infer, infer
from .linalg import row_norm_max
from .nuclear import NuclearConfig, build_init
from .panel import GroupSpec, Mode, ObservedPanel, compute_heterogeneity
from .pipeline import PipelineConfig, run_pipeline
from .weights import (
    DiversifiedWeights,
    Provenance,
    from_characteristics,
    from_scaled_singular_vectors,
)

WEIGHT_SCHEMES = ("oracle-augmented", "characteristics", "scaled-singular-vectors")
X_DISTS = ("ones", "uniform")

# stream labels for SeedSequence spawn keys
_DESIGN, _WEIGHTS, _MASK, _NOISE = 0, 1, 2, 3


@dataclass(frozen=True)
class DgpConfig:
    """Simulation design.

    ``p`` is the observation probability per unit (binary mode), either a
    scalar or a length-N sequence. ``x_dist`` selects the regressor law in
    general mode: ``ones`` or ``uniform`` on [0.5, 1.5].
    """

    N: int = 150
    T: int = 150
    r: int = 2
    a_N: float = 1.0
    sigma: float = 1.0
    p: float | tuple[float, ...] = 0.8
    R: int = 4
    mode: str = "binary-mask"
    x_dist: str = "ones"
    weight_scheme: str = "oracle-augmented"
    fixed_design: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.N < 2 or self.T < 2:
            raise ValidationError("N and T must be at least 2")
        if not 1 <= self.r <= self.R:
            raise ValidationError(f"need 1 <= r <= R, got r={self.r}, R={self.R}")
        if self.R > min(self.N, self.T) / 4:
            raise ValidationError(f"R={self.R} exceeds min(N, T)/4")
        if not self.a_N > 0 or self.sigma < 0:
            raise ValidationError("need a_N > 0 and sigma >= 0")
        p = self.p_vector()
        if np.any(p <= 0) or np.any(p > 1):
            raise ValidationError("observation probabilities must lie in (0, 1]")
        Mode.parse(self.mode)
        if self.x_dist not in X_DISTS:
            raise ValidationError(f"x_dist must be one of {X_DISTS}")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ValidationError(f"weight_scheme must be one of {WEIGHT_SCHEMES}")

    def p_vector(self) -> np.ndarray:
        p = np.asarray(self.p, dtype=float)
        if p.ndim == 0:
            return np.full(self.N, float(p))
        if p.shape != (self.N,):
            raise ValidationError(f"p must be scalar or length {self.N}")
        return p

    @property
    def is_binary(self) -> bool:
        return Mode.parse(self.mode) is Mode.BINARY

    def to_json(self) -> dict:
        d = asdict(self)
        if isinstance(d["p"], tuple):
            d["p"] = list(d["p"])
        return d


@dataclass
class SimDraw:
    panel: ObservedPanel
    truth: np.ndarray
    beta: np.ndarray
    F: np.ndarray
    weights: DiversifiedWeights


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *key]))


def _design(cfg: DgpConfig, rep: int):
    key = () if cfg.fixed_design else (rep,)
    g = _rng(cfg.seed, _DESIGN, *key)
    beta = cfg.a_N * g.standard_normal((cfg.N, cfg.r))
    F = g.standard_normal((cfg.T, cfg.r))
    if row_norm_max(beta) > 5 * np.linalg.norm(beta, 2) / math.sqrt(cfg.N):
        warnings.warn("generated loadings look coherent", LrinferWarning, stacklevel=3)
    return beta, F


def _scale(W: np.ndarray) -> np.ndarray:
    return W * (math.sqrt(W.shape[0]) / np.linalg.norm(W, axis=0))


def make_weights(cfg: DgpConfig, beta, F, rep: int = 0, R: int | None = None) -> DiversifiedWeights:
    """Weights for the configured scheme.

    ``oracle-augmented`` stacks the true loadings/factors with extra Gaussian
    columns. Extra columns for a smaller ``R`` are a prefix of those for a
    larger one, so different ranks can be compared on common draws.
    """
    R = cfg.R if R is None else R
    key = () if cfg.fixed_design else (rep,)
    g = _rng(cfg.seed, _WEIGHTS, *key)
    N, T, r = cfg.N, cfg.T, cfg.r
    if cfg.weight_scheme == "oracle-augmented":
        pad = max(min(N, T) // 4 - r, 0)
        Gb = g.standard_normal((N, pad))[:, : R - r]
        Gf = g.standard_normal((T, pad))[:, : R - r]
        return DiversifiedWeights(_scale(np.hstack([beta, Gb])), _scale(np.hstack([F, Gf])),
                                  Provenance.ORACLE_AUGMENTED)
    if cfg.weight_scheme == "characteristics":
        layouts = {r: (1, False), r + 1: (1, True), 2 * r: (2, False), 2 * r + 1: (2, True)}
        if R not in layouts:
            raise ValidationError(f"characteristics scheme supports R in {sorted(layouts)}")
        degree, const = layouts[R]
        Z = beta / cfg.a_N + 0.3 * g.standard_normal(beta.shape)
        Ff = F + 0.3 * g.standard_normal(F.shape)
        return from_characteristics(Z, Ff, degree, const)
    # scaled singular vectors of extra periods (for W_beta) and extra units (for W_F)
    n_extra = max(2 * R, 20)
    F_extra = g.standard_normal((n_extra, r))
    Yb = beta @ F_extra.T + cfg.sigma * g.standard_normal((N, n_extra))
    beta_extra = cfg.a_N * g.standard_normal((n_extra, r))
    Yf = beta_extra @ F.T + cfg.sigma * g.standard_normal((n_extra, T))
    Wb = from_scaled_singular_vectors(Yb, np.ones_like(Yb), R, side="beta")
    Wf = from_scaled_singular_vectors(Yf, np.ones_like(Yf), R, side="F")
    return DiversifiedWeights(Wb, Wf, Provenance.SCALED_SINGULAR_VECTORS)


def _mask(cfg: DgpConfig, rep: int) -> np.ndarray:
    g = _rng(cfg.seed, _MASK, rep)
    return (g.random((cfg.N, cfg.T)) < cfg.p_vector()[:, None]).astype(float)


def _noise(cfg: DgpConfig, rep: int) -> np.ndarray:
    g = _rng(cfg.seed, _NOISE, rep)
    return cfg.sigma * g.standard_normal((cfg.N, cfg.T))


def generate(cfg: DgpConfig, rep: int = 0) -> SimDraw:
    """One draw of ``(panel, M*, beta, F, weights)``.

    Binary mode: ``Y = X o (M* + E)`` with ``X_it ~ Bernoulli(p_i)``.
    General mode: ``Y = X o M* + E``.
    """
    beta, F = _design(cfg, rep)
    M = beta @ F.T
    E = _noise(cfg, rep)
    if cfg.is_binary:
        X = _mask(cfg, rep)
        Y = X * (M + E)
        mode = Mode.BINARY
    else:
        if cfg.x_dist == "ones":
            X = np.ones((cfg.N, cfg.T))
        else:
            X = _rng(cfg.seed, _MASK, rep).uniform(0.5, 1.5, (cfg.N, cfg.T))
        Y = X * M + E
        mode = Mode.GENERAL
    return SimDraw(ObservedPanel(Y, X, mode), M, beta, F, make_weights(cfg, beta, F, rep))


@dataclass
class HteDraw:
    panel1: ObservedPanel
    panel0: ObservedPanel
    gamma: np.ndarray
    beta: np.ndarray
    F0: np.ndarray
    F1: np.ndarray
    weights: DiversifiedWeights


def generate_hte(cfg: DgpConfig, effect_size: float, rep: int = 0) -> HteDraw:
    """Two complementary masked arms sharing loadings and latent noise.

    ``F1 = F0`` plus ``effect_size`` added to the first factor, so the
    effect matrix is ``effect_size * beta[:, 0] 1'``. Treatment indicators
    are ``D_it ~ Bernoulli(p_i)``. Weights use ``beta`` and ``F0``.
    """
    beta, F0 = _design(cfg, rep)
    F1 = F0.copy()
    F1[:, 0] += effect_size
    D = _mask(cfg, rep)
    E = _noise(cfg, rep)
    M1, M0 = beta @ F1.T, beta @ F0.T
    p1 = ObservedPanel(D * (M1 + E), D, Mode.BINARY)
    p0 = ObservedPanel((1 - D) * (M0 + E), 1 - D, Mode.BINARY)
    return HteDraw(p1, p0, M1 - M0, beta, F0, F1, make_weights(cfg, beta, F0, rep))


# ---------------------------------------------------------------------------
# Monte Carlo harness


@dataclass(frozen=True)
class Variant:
    """One estimator configuration evaluated on every replication."""

    R: int
    ablate_B2: bool = False


@dataclass
class CoverageReport:
    reps: int
    failed: int
    coverage: float
    mean_bias: float
    rmse: float
    variance_ratio: float
    mean_ci_width: float
    level: float
    table: list[dict] = field(default_factory=list, repr=False)

    def to_json(self, include_table: bool = False) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "table"}
        if include_table:
            d["table"] = self.table
        return d

    def z_stats(self) -> list[float]:
        return [row["z"] for row in self.table]

    def write_table(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(TABLE_FIELDS))
            w.writeheader()
            for row in self.table:
                w.writerow({k: row[k] for k in TABLE_FIELDS})


TABLE_FIELDS = ("rep", "estimate", "truth", "variance", "z", "ci_lower", "ci_upper", "covered")


def summarize(rows: list[dict], failed: int, level: float) -> CoverageReport:
    """Aggregate per-rep rows; sums are compensated so order does not matter."""
    rows = sorted(rows, key=lambda r: r["rep"])
    n = len(rows)
    if n == 0:
        return CoverageReport(0, failed, math.nan, math.nan, math.nan, math.nan, math.nan, level, [])
    err = [r["estimate"] - r["truth"] for r in rows]
    mean_err = math.fsum(err) / n
    var_err = math.fsum((e - mean_err) ** 2 for e in err) / max(n - 1, 1)
    med_v = float(np.median([r["variance"] for r in rows]))
    return CoverageReport(
        reps=n,
        failed=failed,
        coverage=sum(bool(r["covered"]) for r in rows) / n,
        mean_bias=mean_err,
        rmse=math.sqrt(math.fsum(e * e for e in err) / n),
        variance_ratio=var_err / med_v if med_v > 0 else math.inf,
        mean_ci_width=math.fsum(r["ci_upper"] - r["ci_lower"] for r in rows) / n,
        level=level,
        table=rows,
    )


def _row(rep, res, truth) -> dict:
    return {
        "rep": rep,
        "estimate": res.estimate,
        "truth": truth,
        "variance": res.variance,
        "z": (res.estimate - truth) / res.std_error if res.std_error > 0 else (
            0.0 if res.estimate == truth else math.copysign(math.inf, res.estimate - truth)),
        "ci_lower": res.ci_lower,
        "ci_upper": res.ci_upper,
        "covered": res.covers(truth),
        "z_null": res.z_stat,
    }


@dataclass(frozen=True)
class _Job:
    kind: str
    cfg: DgpConfig
    group: GroupSpec
    level: float
    variants: tuple[Variant, ...]
    nuclear: NuclearConfig
    force_sigma0: bool
    effect_sizes: tuple[float, ...] = ()


def _one_rep(job: _Job, rep: int) -> list[dict]:
    """Rows for every variant of one replication (one row list per variant)."""
    if job.kind == "hte":
        return _one_hte_rep(job, rep)
    draw = generate(job.cfg, rep)
    panel = draw.panel
    hw = compute_heterogeneity(panel)
    max_R = max(v.R for v in job.variants)
    init = build_init(panel, hw, job.group, job.nuclear, rank=max_R)
    truth = group_average(draw.truth, job.group)
    out = []
    for v in job.variants:
        w = make_weights(job.cfg, draw.beta, draw.F, rep, R=v.R)
        pcfg = PipelineConfig(job.nuclear, ablate_B2=v.ablate_B2, force_sigma0=job.force_sigma0)
        fit = run_pipeline(panel, w, job.group, pcfg, hw=hw, init=init)
        res = infer(fit, panel, hw, w, job.group, job.level)
        row = _row(rep, res, truth)
        row["sigma2_tilde"] = fit.sigma2_tilde
        out.append(row)
    return out


def _one_hte_rep(job: _Job, rep: int) -> list[dict]:
    """Rows per effect size; the control arm is fitted once and shared."""
    v = job.variants[0]
    pcfg = PipelineConfig(job.nuclear, ablate_B2=v.ablate_B2, force_sigma0=job.force_sigma0)
    out = []
    fit0 = panel0 = hw0 = None
    for eff in job.effect_sizes:
        draw = generate_hte(job.cfg, eff, rep)
        w = make_weights(job.cfg, draw.beta, draw.F0, rep, R=v.R)
        if fit0 is None:
            panel0 = draw.panel0
            hw0 = compute_heterogeneity(panel0)
            fit0 = run_pipeline(panel0, w, job.group, pcfg, hw=hw0)
        hw1 = compute_heterogeneity(draw.panel1)
        fit1 = run_pipeline(draw.panel1, w, job.group, pcfg, hw=hw1)
        res = hte_infer(fit1, fit0, draw.panel1, panel0, hw1, hw0, w, job.group, job.level)
        out.append(_row(rep, res, group_average(draw.gamma, job.group)))
    return out


def _safe_rep(job: _Job, rep: int):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LrinferWarning)
            return rep, _one_rep(job, rep), None
    except (LrinferError, np.linalg.LinAlgError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def _run_chunk(job: _Job, reps: list[int]):
    return [_safe_rep(job, rep) for rep in reps]


def _execute(job: _Job, reps: int, threads: int, n_out: int, level: float) -> list[CoverageReport]:
    if reps < 1:
        raise ValidationError("reps must be positive")
    indices = list(range(reps))
    if threads > 1:
        chunks = [indices[k::threads] for k in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = [r for part in ex.map(_run_chunk, [job] * threads, chunks) for r in part]
    else:
        results = _run_chunk(job, indices)
    rows: list[list[dict]] = [[] for _ in range(n_out)]
    failed = 0
    for _, res, err in results:
        if res is None:
            failed += 1
            continue
        for k in range(n_out):
            rows[k].append(res[k])
    return [summarize(rows[k], failed, level) for k in range(n_out)]


def coverage_study(
    cfg: DgpConfig,
    group: GroupSpec,
    reps: int,
    level: float = 0.95,
    variants: tuple[Variant, ...] | None = None,
    nuclear: NuclearConfig = NuclearConfig(),
    force_sigma0: bool = False,
    threads: int = 1,
) -> dict[Variant, CoverageReport]:
    """Evaluate several estimator variants on common replications.

    The initial estimator does not depend on the weights, so it is computed
    once per replication and shared by all variants.
    """
    variants = tuple(variants or (Variant(cfg.R),))
    for v in variants:
        replace(cfg, R=v.R)  # validates R against the design
    job = _Job("plain", cfg, group, level, variants, nuclear, force_sigma0)
    reports = _execute(job, reps, threads, len(variants), level)
    return dict(zip(variants, reports))


def coverage_experiment(
    cfg: DgpConfig,
    group: GroupSpec,
    reps: int,
    level: float = 0.95,
    ablate_B2: bool = False,
    nuclear: NuclearConfig = NuclearConfig(),
    force_sigma0: bool = False,
    threads: int = 1,
) -> CoverageReport:
    """Coverage of the group-average confidence interval over ``reps`` draws."""
    if reps < 50:
        raise ValidationError("coverage experiments need reps >= 50")
    v = Variant(cfg.R, ablate_B2)
    return coverage_study(cfg, group, reps, level, (v,), nuclear, force_sigma0, threads)[v]


def hte_coverage_study(
    cfg: DgpConfig,
    group: GroupSpec,
    reps: int,
    effect_sizes: tuple[float, ...] = (0.5,),
    level: float = 0.95,
    nuclear: NuclearConfig = NuclearConfig(),
    ablate_B2: bool = False,
    threads: int = 1,
) -> dict[float, CoverageReport]:
    """Treatment-effect coverage for several effect sizes on common draws.

    The control arm does not depend on the effect size and is fitted once
    per replication.
    """
    job = _Job("hte", cfg, group, level, (Variant(cfg.R, ablate_B2),), nuclear, False,
               tuple(effect_sizes))
    reports = _execute(job, reps, threads, len(effect_sizes), level)
    return dict(zip(effect_sizes, reports))
