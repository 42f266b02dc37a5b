"""Multi-sample subsequence DTW for few-shot keyword detection."""

__version__ = "0.1.0"

from .barycenter import QueryClass, altered_mean, convert_sample, dba_standard_mean, prepare_class
from .detection import Detection, EvalReport, RefEvent, extract_detections, postprocess, score_events
from .dtw import (
    CLASSIC_STEPS,
    DEFAULT_STEPS,
    FeatureSequence,
    MatchingFunction,
    StepSet,
    backtrack,
    cost_matrix,
    dtw_full,
    subsequence_dtw,
)
from .features import cepstral_features, load_wav, read_feature_file, read_labels, write_feature_file
from .multisample import CostTensor, build_cost_tensor, class_match, reduce_min

__all__ = [
    "CLASSIC_STEPS",
    "DEFAULT_STEPS",
    "CostTensor",
    "Detection",
    "EvalReport",
    "FeatureSequence",
    "MatchingFunction",
    "QueryClass",
    "RefEvent",
    "StepSet",
    "altered_mean",
    "backtrack",
    "build_cost_tensor",
    "cepstral_features",
    "class_match",
    "convert_sample",
    "cost_matrix",
    "dba_standard_mean",
    "dtw_full",
    "extract_detections",
    "load_wav",
    "postprocess",
    "prepare_class",
    "read_feature_file",
    "read_labels",
    "reduce_min",
    "score_events",
    "subsequence_dtw",
    "write_feature_file",
]
