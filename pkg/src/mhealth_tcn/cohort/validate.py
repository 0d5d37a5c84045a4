"""Eligibility screening and invariant checks for a parsed cohort."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import N_CONDITIONS, Cohort, UserData, check_trace, CohortError

MIN_STEP_DAYS = 10
MIN_STEP_AND_SLEEP_DAYS = 1


@dataclass
class UserCheck:
    user_id: str
    step_days: int
    sleep_days: int
    step_and_sleep_days: int
    violations: list[str] = field(default_factory=list)

    @property
    def eligible(self) -> bool:
        return (
            self.step_days >= MIN_STEP_DAYS
            and self.step_and_sleep_days >= MIN_STEP_AND_SLEEP_DAYS
            and not self.violations
        )


@dataclass
class ValidationReport:
    users: list[UserCheck]

    @property
    def eligible_ids(self) -> list[str]:
        return [u.user_id for u in self.users if u.eligible]

    @property
    def ineligible_ids(self) -> list[str]:
        return [u.user_id for u in self.users if not u.eligible]

    def summary(self) -> str:
        return f"{len(self.eligible_ids)} of {len(self.users)} users eligible"


def _check_user(u: UserData) -> UserCheck:
    p = u.profile
    problems = []
    if abs(p.bmi - p.weight / (p.height / 100.0) ** 2) > 0.1:
        problems.append("bmi inconsistent with weight/height")
    if p.max_weight < p.weight:
        problems.append("max_weight < weight")
    if len(p.labels) != N_CONDITIONS:
        problems.append(f"labels has {len(p.labels)} entries")

    step_sums = dict(zip(u.step_dates.tolist(), u.step_values.sum(axis=1, dtype=np.int64).tolist()))
    for d in u.days:
        if not d.wore_step and d.steps_total is not None:
            problems.append(f"day {d.date}: steps_total without wore_step")
        if not d.wore_sleep and d.sleep_minutes is not None:
            problems.append(f"day {d.date}: sleep_minutes without wore_sleep")
        if not d.wore_weight and d.weight is not None:
            problems.append(f"day {d.date}: weight without wore_weight")
        if d.wore_step and d.steps_total is not None and d.date in step_sums:
            if step_sums[d.date] != d.steps_total:
                problems.append(f"day {d.date}: steps_total != trace sum")
    for kind, values in (("step", u.step_values), ("sleep", u.sleep_values)):
        try:
            if len(values):
                check_trace(kind, values)
        except CohortError as exc:
            problems.append(f"{kind} trace: {exc}")

    step_days = set(u.step_dates.tolist())
    sleep_days = set(u.sleep_dates.tolist())
    return UserCheck(
        user_id=p.user_id,
        step_days=len(step_days),
        sleep_days=len(sleep_days),
        step_and_sleep_days=len(step_days & sleep_days),
        violations=problems,
    )


def validate_cohort(cohort: Cohort) -> ValidationReport:
    """Flag users failing the inclusion rule (>= 10 step-trace days and at
    least one day with both step and sleep traces) or any data invariant."""
    return ValidationReport([_check_user(u) for u in cohort.users])


def eligible_cohort(cohort: Cohort) -> Cohort:
    return cohort.subset(validate_cohort(cohort).eligible_ids)
