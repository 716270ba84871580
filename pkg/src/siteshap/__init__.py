"""Shapley attribution of cross-site performance gaps to site factors."""

from __future__ import annotations

__version__ = "0.1.0"

from .dataset import FactorSpec, Schema, ScoredDataset, ScoredRecord, bin_continuous, ingest, marginal, write_dataset
from .errors import (
    AttributionInfeasible,
    ConfigError,
    DataValidationError,
    InsufficientSupport,
    SiteShapError,
    UndefinedMetricError,
)
from .matching import Matcher, match_prefix, matched_performance
from .metric import MetricResult, auc, bootstrap_ci
from .shapley import AttributionReport, FactorContribution, StoppingRule, attribute, drill_down, exact_attribute
from .synth import SynthScenario, generate, ground_truth, ground_truth_phi, load_scenario

__all__ = [
    "AttributionInfeasible", "AttributionReport", "ConfigError", "DataValidationError", "FactorContribution",
    "FactorSpec", "InsufficientSupport", "Matcher", "MetricResult", "Schema", "ScoredDataset", "ScoredRecord",
    "SiteShapError", "StoppingRule", "SynthScenario", "UndefinedMetricError", "attribute", "auc",
    "bin_continuous", "bootstrap_ci", "drill_down", "exact_attribute", "generate", "ground_truth",
    "ground_truth_phi", "ingest", "load_scenario", "marginal", "match_prefix", "matched_performance",
    "write_dataset",
]
