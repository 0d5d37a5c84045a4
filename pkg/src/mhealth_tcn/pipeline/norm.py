from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .frames import BINARY_COLUMNS, FeatureFrame

STD_FLOOR = 1e-8


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    feature_names: tuple[str, ...]

    def sliced(self, dims: int) -> NormStats:
        return NormStats(self.mean[:dims], self.std[:dims], self.feature_names[:dims])


def _as_array(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return frames
    return np.stack([f.values for f in frames])


def fit_norm(frames, feature_names: tuple[str, ...] | None = None) -> NormStats:
    """Per-feature z-score statistics pooled over users and days.

    Binary (one-hot, boolean) columns get mean 0 and std 1 so they pass
    through unchanged.
    """
    x = _as_array(frames)
    if feature_names is None:
        feature_names = frames[0].feature_names
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    constant = (flat == flat[:1]).all(axis=0) if len(flat) else np.ones(x.shape[-1], bool)
    if len(flat):
        mean[constant] = flat[0, constant]
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    binary = np.array([n in BINARY_COLUMNS for n in feature_names], dtype=bool)
    mean[binary] = 0.0
    std[binary] = 1.0
    return NormStats(mean, std, tuple(feature_names))


def apply_norm(frames, stats: NormStats):
    """Normalize an (n, T, D) array or a list of FeatureFrames."""
    if isinstance(frames, np.ndarray):
        d = frames.shape[-1]
        return (frames - stats.mean[:d]) / stats.std[:d]
    out = []
    for f in frames:
        d = f.dims
        out.append(replace(f, values=(f.values - stats.mean[:d]) / stats.std[:d]))
    return out


def is_binary(feature_names) -> np.ndarray:
    return np.array([n in BINARY_COLUMNS for n in feature_names], dtype=bool)


__all__ = ["NormStats", "fit_norm", "apply_norm", "is_binary", "FeatureFrame"]
