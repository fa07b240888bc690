"""Rank-robust inference for group averages of low-rank matrices."""

from .diagnostics import DiagnosticsReport, diagnose
from .errors import LrinferError, LrinferWarning, SolverError, ValidationError
from .inference import InferenceResult, group_average, hte_infer, infer, variance_block, variance_group
from .nuclear import NuclearConfig, auto_lambda, build_init, fit_weighted_nuclear
from .panel import (
    GroupSpec,
    HeterogeneityWeights,
    Mode,
    ObservedPanel,
    compute_heterogeneity,
    load_panel,
)
from .pipeline import FitResult, PipelineConfig, run_pipeline
from .weights import DiversifiedWeights

__version__ = "0.1.0"

__all__ = [
    "DiagnosticsReport",
    "DiversifiedWeights",
    "FitResult",
    "GroupSpec",
    "HeterogeneityWeights",
    "InferenceResult",
    "LrinferError",
    "LrinferWarning",
    "Mode",
    "NuclearConfig",
    "ObservedPanel",
    "PipelineConfig",
    "SolverError",
    "ValidationError",
    "auto_lambda",
    "build_init",
    "compute_heterogeneity",
    "diagnose",
    "fit_weighted_nuclear",
    "group_average",
    "hte_infer",
    "infer",
    "load_panel",
    "run_pipeline",
    "variance_block",
    "variance_group",
]
