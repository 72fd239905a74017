"""Attack-agnostic adversarial example detection by random subspace analysis."""

from rsad.detector import (
    DetectionResult,
    Detector,
    LayerModel,
    NearestLabelSet,
    aggregate_layers,
    consistency_score,
    decide,
    random_subspace_analysis,
    score_batch,
)
from rsad.projection import (
    DistortionReport,
    ProjectionEnsemble,
    ProjectionMatrix,
    jl_distortion_check,
    project,
    sample_ensemble,
)
from rsad.prototype import (
    ActivationSet,
    PrototypeSet,
    Truth,
    distance,
    fit_prototypes,
    nearest_prototype,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationSet",
    "DetectionResult",
    "Detector",
    "DistortionReport",
    "LayerModel",
    "NearestLabelSet",
    "ProjectionEnsemble",
    "ProjectionMatrix",
    "PrototypeSet",
    "Truth",
    "aggregate_layers",
    "consistency_score",
    "decide",
    "distance",
    "fit_prototypes",
    "jl_distortion_check",
    "nearest_prototype",
    "project",
    "random_subspace_analysis",
    "sample_ensemble",
    "score_batch",
]
