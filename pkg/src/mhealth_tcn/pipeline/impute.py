"""Per-user gap censoring and linear interpolation of per-day series."""

from __future__ import annotations

import numpy as np


class ImputationError(ValueError):
    pass


def gap_adjacent(observed: np.ndarray) -> np.ndarray:
    """Observed days immediately before or after a run of missing days."""
    observed = np.asarray(observed, dtype=bool)
    missing = ~observed
    adj = np.zeros_like(observed)
    adj[:-1] |= missing[1:]
    adj[1:] |= missing[:-1]
    return adj & observed


def censor_and_interpolate(series, t_days: int | None = None) -> np.ndarray:
    """Fill a per-day series (NaN = missing) with no missing entries left.

    Observed values bordering a gap are likely partial days, so they are
    dropped first. Interior missing days are linearly interpolated between
    the nearest observed neighbours; leading and trailing missing days take
    the nearest observed value. If censoring would remove every observation
    the uncensored series is interpolated instead.
    """
    x = np.asarray(series, dtype=np.float64)
    if t_days is not None and len(x) != t_days:
        raise ImputationError(f"series length {len(x)} != {t_days}")
    observed = ~np.isnan(x)
    if not observed.any():
        raise ImputationError("cannot impute empty series")
    keep = observed & ~gap_adjacent(observed)
    if not keep.any():
        keep = observed
    idx = np.flatnonzero(keep)
    # np.interp holds the edge values constant outside [idx[0], idx[-1]]
    return np.interp(np.arange(len(x)), idx, x[idx])


def surviving_mask(series) -> np.ndarray:
    """Days whose observed value is carried through imputation unchanged."""
    observed = ~np.isnan(np.asarray(series, dtype=np.float64))
    keep = observed & ~gap_adjacent(observed)
    return keep if keep.any() else observed
