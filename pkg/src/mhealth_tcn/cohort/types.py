"""Data model for a cohort of wearable users."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

MINUTES_PER_DAY = 1440
MAX_STEPS_PER_MINUTE = 300

CONDITIONS: tuple[str, ...] = (
    "anxiety",
    "depression",
    "other_mental_illness",
    "chronic_pain",
    "insomnia",
    "sleep_apnea",
    "hypertension",
    "type2_diabetes",
    "dyslipidemia",
)
N_CONDITIONS = len(CONDITIONS)
MHNS = CONDITIONS[:6]
MC = CONDITIONS[6:]

GENDERS: tuple[str, ...] = ("female", "male")
ETHNICITIES: tuple[str, ...] = ("white", "black", "hispanic", "asian", "native", "other")
EDUCATION: tuple[str, ...] = (
    "less_than_high_school",
    "high_school",
    "some_college",
    "bachelors",
    "graduate",
)

SLEEP_AWAKE = 0
SLEEP_ASLEEP = 1
SLEEP_RESTLESS = 2


class CohortError(ValueError):
    """Invalid cohort data or configuration."""


@dataclass
class UserProfile:
    user_id: str
    age: int
    gender: str
    ethnicity: str
    education: str
    parental_status: bool
    weight: float
    max_weight: float
    height: float
    bmi: float
    labels: tuple[int, ...]

    def label(self, condition: str) -> int:
        return self.labels[CONDITIONS.index(condition)]


@dataclass
class DayRecord:
    user_id: str
    date: int
    steps_total: int | None
    sleep_minutes: int | None
    weight: float | None
    wore_step: bool
    wore_sleep: bool
    wore_weight: bool


@dataclass
class MinuteTrace:
    user_id: str
    date: int
    kind: str  # "step" or "sleep"
    values: np.ndarray

    def __post_init__(self) -> None:
        check_trace(self.kind, self.values)


def check_trace(kind: str, values: np.ndarray) -> None:
    """Raise CohortError if a minute trace violates its invariants."""
    if kind not in ("step", "sleep"):
        raise CohortError(f"unknown trace kind {kind!r}")
    if values.shape[-1] != MINUTES_PER_DAY:
        raise CohortError(f"trace length {values.shape[-1]} ≠ {MINUTES_PER_DAY}")
    if kind == "step":
        if values.min(initial=0) < 0 or values.max(initial=0) > MAX_STEPS_PER_MINUTE:
            raise CohortError(f"step counts must lie in [0, {MAX_STEPS_PER_MINUTE}]")
    elif not np.isin(values, (0, 1, 2)).all():
        raise CohortError("sleep states must be in {0, 1, 2}")


@dataclass
class UserData:
    """Everything recorded for one user.

    Minute traces are stacked per kind: ``step_values[i]`` is the trace for
    day ``step_dates[i]``.
    """

    profile: UserProfile
    days: list[DayRecord]
    step_dates: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))
    step_values: np.ndarray = field(
        default_factory=lambda: np.zeros((0, MINUTES_PER_DAY), dtype=np.int16)
    )
    sleep_dates: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))
    sleep_values: np.ndarray = field(
        default_factory=lambda: np.zeros((0, MINUTES_PER_DAY), dtype=np.int8)
    )

    @property
    def user_id(self) -> str:
        return self.profile.user_id

    def traces(self) -> Iterator[MinuteTrace]:
        for d, v in zip(self.step_dates, self.step_values):
            yield MinuteTrace(self.user_id, int(d), "step", v)
        for d, v in zip(self.sleep_dates, self.sleep_values):
            yield MinuteTrace(self.user_id, int(d), "sleep", v)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UserData):
            return NotImplemented
        return (
            self.profile == other.profile
            and self.days == other.days
            and np.array_equal(self.step_dates, other.step_dates)
            and np.array_equal(self.step_values, other.step_values)
            and np.array_equal(self.sleep_dates, other.sleep_dates)
            and np.array_equal(self.sleep_values, other.sleep_values)
        )


@dataclass
class Cohort:
    users: list[UserData]
    t_days: int
    manifest: dict[str, list[dict]] = field(default_factory=dict)

    @property
    def profiles(self) -> list[UserProfile]:
        return [u.profile for u in self.users]

    @property
    def day_records(self) -> list[DayRecord]:
        return [d for u in self.users for d in u.days]

    def minute_traces(self) -> Iterator[MinuteTrace]:
        for u in self.users:
            yield from u.traces()

    def labels(self) -> np.ndarray:
        """(n_users, 9) 0/1 label matrix."""
        if not self.users:
            return np.zeros((0, N_CONDITIONS), dtype=np.int8)
        return np.array([u.profile.labels for u in self.users], dtype=np.int8)

    def subset(self, user_ids) -> Cohort:
        keep = set(user_ids)
        return Cohort([u for u in self.users if u.user_id in keep], self.t_days, self.manifest)

    def __len__(self) -> int:
        return len(self.users)
