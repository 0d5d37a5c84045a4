"""Baseline classifiers: logistic regression (raw and aggregated) and a random forest."""

from __future__ import annotations

import numpy as np

from .forest import Forest, load_forest, max_features_rule, rf_predict, rf_train, save_forest
from .linear import (
    L2_GRID,
    BaselineError,
    LinearModel,
    LRConfig,
    fit_logistic,
    load_linear,
    lr_predict,
    lr_select,
    lr_train,
    save_linear,
)


def aggregate_features(frame) -> np.ndarray:
    """Per-feature mean over days: (T, D) -> (D,), or (n, T, D) -> (n, D).

    Accepts a FeatureFrame or a raw array.
    """
    values = getattr(frame, "values", frame)
    return np.asarray(values, dtype=np.float64).mean(axis=-2)


__all__ = [
    "L2_GRID", "BaselineError", "Forest", "LRConfig", "LinearModel", "aggregate_features",
    "fit_logistic", "load_forest", "load_linear", "lr_predict", "lr_select", "lr_train",
    "max_features_rule", "rf_predict", "rf_train", "save_forest", "save_linear",
]
