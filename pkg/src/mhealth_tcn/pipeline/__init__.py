from .cache import read_feature_cache, write_feature_cache
from .features import (
    SLEEP_FEATURES,
    STEP_FEATURES,
    extract_sleep_features,
    extract_step_features,
    sleep_feature_matrix,
    step_feature_matrix,
)
from .frames import (
    FEATURE_NAMES,
    LAYER_DIMS,
    LAYERS,
    FeatureFrame,
    Layer,
    assemble_frames,
    build_frame,
    encode_static,
    stack_frames,
)
from .impute import ImputationError, censor_and_interpolate
from .norm import NormStats, apply_norm, fit_norm

__all__ = [
    "FEATURE_NAMES", "LAYERS", "LAYER_DIMS", "SLEEP_FEATURES", "STEP_FEATURES",
    "FeatureFrame", "ImputationError", "Layer", "NormStats", "apply_norm", "assemble_frames",
    "build_frame", "censor_and_interpolate", "encode_static", "extract_sleep_features",
    "extract_step_features", "fit_norm", "read_feature_cache", "sleep_feature_matrix",
    "stack_frames", "step_feature_matrix", "write_feature_cache",
]
