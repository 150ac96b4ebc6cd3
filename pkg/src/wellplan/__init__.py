"""Clustered contamination-risk estimation and risk-adaptive sampling design."""

from .estimator import FitConfig, FitResult, fit, prox_fused_lasso, select_rho
from .graph import SpatialGraph, connected_components, hybrid_graph, knn_graph
from .ingest import (
    CandidateWell,
    CountyPolygon,
    ObservationSet,
    RawTestRecord,
    WellObservation,
    aggregate_observations,
    binarize,
)
from .sizing import (
    Interval,
    SizeResult,
    SizingSpec,
    expected_length,
    jeffreys_ci,
    jeffreys_sample_size,
    wilson_ci,
    wilson_sample_size,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateWell",
    "CountyPolygon",
    "FitConfig",
    "FitResult",
    "Interval",
    "ObservationSet",
    "RawTestRecord",
    "SizeResult",
    "SizingSpec",
    "SpatialGraph",
    "WellObservation",
    "aggregate_observations",
    "binarize",
    "connected_components",
    "expected_length",
    "fit",
    "hybrid_graph",
    "jeffreys_ci",
    "jeffreys_sample_size",
    "knn_graph",
    "prox_fused_lasso",
    "select_rho",
    "wilson_ci",
    "wilson_sample_size",
    "__version__",
]
