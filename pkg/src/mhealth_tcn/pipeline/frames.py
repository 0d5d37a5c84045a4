"""Assembly of per-user T x D feature matrices at each data layer.

Columns are ordered so that every layer is a prefix of the next:

    demographic (15) | basic health (4) | day-level (6) | minute step (31) | minute sleep (18)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..cohort.types import EDUCATION, ETHNICITIES, GENDERS, Cohort, UserData, UserProfile
from .features import SLEEP_FEATURES, STEP_FEATURES, sleep_feature_matrix, step_feature_matrix
from .impute import ImputationError, censor_and_interpolate, surviving_mask

log = logging.getLogger(__name__)


class Layer(str, Enum):
    DEMOGRAPHIC = "demographic"
    BASIC_HEALTH = "basic_health"
    DAY_LEVEL = "day_level"
    MINUTE_STEP = "minute_step"
    MINUTE_SLEEP = "minute_sleep"

    @property
    def dims(self) -> int:
        return LAYER_DIMS[self]


LAYERS: tuple[Layer, ...] = tuple(Layer)

DEMOGRAPHIC_FEATURES: tuple[str, ...] = (
    ("age",)
    + tuple(f"gender_{g}" for g in GENDERS)
    + tuple(f"ethnicity_{e}" for e in ETHNICITIES)
    + tuple(f"education_{e}" for e in EDUCATION)
    + ("parental_status",)
)
BASIC_HEALTH_FEATURES: tuple[str, ...] = ("weight", "max_weight", "height", "bmi")
DAY_FEATURES: tuple[str, ...] = (
    "steps_total", "sleep_minutes", "day_weight", "wore_step", "wore_sleep", "wore_weight",
)
FEATURE_NAMES: tuple[str, ...] = (
    DEMOGRAPHIC_FEATURES + BASIC_HEALTH_FEATURES + DAY_FEATURES + STEP_FEATURES + SLEEP_FEATURES
)
STATIC_DIMS = len(DEMOGRAPHIC_FEATURES) + len(BASIC_HEALTH_FEATURES)

LAYER_DIMS: dict[Layer, int] = {
    Layer.DEMOGRAPHIC: len(DEMOGRAPHIC_FEATURES),
    Layer.BASIC_HEALTH: STATIC_DIMS,
    Layer.DAY_LEVEL: STATIC_DIMS + len(DAY_FEATURES),
    Layer.MINUTE_STEP: STATIC_DIMS + len(DAY_FEATURES) + len(STEP_FEATURES),
    Layer.MINUTE_SLEEP: len(FEATURE_NAMES),
}

# one-hot and boolean columns keep their 0/1 coding through normalization
BINARY_COLUMNS: frozenset[str] = frozenset(
    [n for n in DEMOGRAPHIC_FEATURES if n.startswith(("gender_", "ethnicity_", "education_"))]
    + ["parental_status", "wore_step", "wore_sleep", "wore_weight"]
)
_WEAR_COLUMNS = frozenset({"wore_step", "wore_sleep", "wore_weight"})


@dataclass
class FeatureFrame:
    """One user's T x D input matrix.

    ``mask`` is True where the value is an original observation carried
    through unchanged; imputed, censored and padded entries are False.
    """

    user_id: str
    layer: Layer
    values: np.ndarray
    mask: np.ndarray
    feature_names: tuple[str, ...]

    @property
    def t_days(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]

    def at_layer(self, layer: Layer) -> FeatureFrame:
        d = LAYER_DIMS[Layer(layer)]
        if d > self.dims:
            raise ValueError(f"frame at {self.layer.value} has no {Layer(layer).value} columns")
        return FeatureFrame(
            self.user_id, Layer(layer), self.values[:, :d], self.mask[:, :d], self.feature_names[:d]
        )


def encode_static(profile: UserProfile) -> np.ndarray:
    """Demographic (15) followed by basic-health (4) encoding."""

    def one_hot(value: str, levels: tuple[str, ...], field: str) -> list[float]:
        if value not in levels:
            raise ValueError(f"unknown {field} level {value!r}")
        return [1.0 if value == lvl else 0.0 for lvl in levels]

    return np.array(
        [float(profile.age)]
        + one_hot(profile.gender, GENDERS, "gender")
        + one_hot(profile.ethnicity, ETHNICITIES, "ethnicity")
        + one_hot(profile.education, EDUCATION, "education")
        + [float(profile.parental_status)]
        + [profile.weight, profile.max_weight, profile.height, profile.bmi]
    )


def _raw_day_matrix(user: UserData, t_days: int, layer: Layer) -> np.ndarray:
    """(T, 6 + 31 + 18) per-day values, NaN where missing, truncated to the layer."""
    d_day = LAYER_DIMS[layer] - STATIC_DIMS
    raw = np.full((t_days, len(DAY_FEATURES) + len(STEP_FEATURES) + len(SLEEP_FEATURES)), np.nan)
    raw[:, 3:6] = 0.0
    for rec in user.days:
        if not 0 <= rec.date < t_days:
            continue
        if rec.steps_total is not None:
            raw[rec.date, 0] = rec.steps_total
        if rec.sleep_minutes is not None:
            raw[rec.date, 1] = rec.sleep_minutes
        if rec.weight is not None:
            raw[rec.date, 2] = rec.weight
        raw[rec.date, 3:6] = (rec.wore_step, rec.wore_sleep, rec.wore_weight)
    if layer in (Layer.MINUTE_STEP, Layer.MINUTE_SLEEP) and len(user.step_dates):
        ok = user.step_dates < t_days
        raw[user.step_dates[ok], 6:37] = step_feature_matrix(user.step_values[ok])
    if layer == Layer.MINUTE_SLEEP and len(user.sleep_dates):
        ok = user.sleep_dates < t_days
        raw[user.sleep_dates[ok], 37:55] = sleep_feature_matrix(user.sleep_values[ok])
    return raw[:, :d_day]


def build_frame(user: UserData, layer: Layer, t_days: int) -> FeatureFrame:
    layer = Layer(layer)
    d = LAYER_DIMS[layer]
    names = FEATURE_NAMES[:d]
    static = encode_static(user.profile)[: min(d, STATIC_DIMS)]
    values = np.empty((t_days, d))
    mask = np.ones((t_days, d), dtype=bool)
    values[:, : len(static)] = static
    if d > STATIC_DIMS:
        raw = _raw_day_matrix(user, t_days, layer)
        for j in range(raw.shape[1]):
            col = STATIC_DIMS + j
            name = names[col]
            if name in _WEAR_COLUMNS:
                values[:, col] = raw[:, j]
                continue
            series = raw[:, j]
            if name == "day_weight" and np.isnan(series).all():
                # no scale readings at all: fall back to the profile weight
                values[:, col] = user.profile.weight
                mask[:, col] = False
                continue
            values[:, col] = censor_and_interpolate(series)
            mask[:, col] = surviving_mask(series)
    return FeatureFrame(user.user_id, layer, values, mask, names)


def assemble_frames(
    cohort: Cohort, layer: Layer | str, t_days: int | None = None
) -> list[FeatureFrame]:
    """Feature frames for every user that can be imputed at this layer.

    Users whose minute-level columns cannot be imputed (no usable trace days)
    are dropped with a warning.
    """
    layer = Layer(layer)
    t = cohort.t_days if t_days is None else t_days
    frames = []
    for user in cohort.users:
        try:
            frames.append(build_frame(user, layer, t))
        except ImputationError as exc:
            log.warning("dropping user %s at layer %s: %s", user.user_id, layer.value, exc)
    return frames


def stack_frames(frames: list[FeatureFrame]) -> np.ndarray:
    """(n_users, T, D) array."""
    if not frames:
        return np.zeros((0, 0, 0))
    return np.stack([f.values for f in frames])
