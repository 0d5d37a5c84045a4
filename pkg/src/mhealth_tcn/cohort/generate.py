"""Synthetic cohort generator with planted, recoverable condition signal.

Mental-health/nervous-system conditions act on minute-level structure only
(bedtime, step volume, activity fragmentation, sleep restlessness, schedule
regularity, multi-day flares) and share a latent comorbidity factor. Metabolic/circulatory labels are a logistic
function of age and BMI and have no effect on any trace.

Every user draws from two independent generator streams keyed by user
index: one for profile and labels, one for wear gaps and minute traces.
Regenerating with a different ``trace_seed`` therefore leaves every label
unchanged.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .types import (
    CONDITIONS,
    EDUCATION,
    ETHNICITIES,
    MAX_STEPS_PER_MINUTE,
    MINUTES_PER_DAY,
    N_CONDITIONS,
    Cohort,
    CohortError,
    DayRecord,
    UserData,
    UserProfile,
)

MIN_DAYS = 14

DEFAULT_PREVALENCE: tuple[float, ...] = (0.20, 0.20, 0.08, 0.15, 0.15, 0.10, 0.25, 0.10, 0.20)

# condition -> ((effect name, magnitude), ...)
DEFAULT_EFFECTS: dict[str, tuple[tuple[str, float], ...]] = {
    "anxiety": (("transition_rate_multiplier", 2.0), ("latent_mh_loading", 1.0)),
    "depression": (
        ("daytime_step_scale", 0.7),
        ("first_step_delay_min", 60.0),
        ("latent_mh_loading", 1.0),
    ),
    # irregular schedule: day-to-day timing noise with an unchanged mean
    "other_mental_illness": (
        ("schedule_jitter_min", 90.0),
        ("latent_mh_loading", 1.0),
    ),
    # short flares of low activity and restless nights at random points in the window
    "chronic_pain": (
        ("flare_episodes", 3.0),
        ("flare_step_scale", 0.4),
        ("latent_mh_loading", 0.7),
    ),
    "insomnia": (
        ("bedtime_shift_min", 90.0),
        ("extra_restless_periods", 4.0),
        ("latent_mh_loading", 0.7),
    ),
    "sleep_apnea": (
        ("extra_awakenings", 0.6),
        ("logit_bmi_per_sd", 0.5),
        ("latent_mh_loading", 0.3),
    ),
    "hypertension": (("logit_age_per_sd", 1.2), ("logit_bmi_per_sd", 0.15)),
    "type2_diabetes": (("logit_age_per_sd", 1.4), ("logit_bmi_per_sd", 0.15)),
    "dyslipidemia": (("logit_age_per_sd", 1.0), ("logit_bmi_per_sd", 0.15)),
}

TRACE_EFFECTS = frozenset(
    {
        "transition_rate_multiplier",
        "daytime_step_scale",
        "first_step_delay_min",
        "bedtime_shift_min",
        "extra_restless_periods",
        "extra_awakenings",
        "schedule_jitter_min",
        "flare_episodes",
        "flare_step_scale",
    }
)
LABEL_EFFECTS = frozenset({"latent_mh_loading", "logit_age_per_sd", "logit_bmi_per_sd"})

AGE_MEAN, AGE_SD = 38.0, 12.0
BMI_MEAN, BMI_SD = 27.0, 5.0

# relative step intensity by hour of day
_DIURNAL = np.array(
    [0.2, 0.2, 0.2, 0.2, 0.3, 0.5, 0.8, 1.2, 1.4, 1.1, 1.0, 1.0,
     1.2, 1.1, 1.0, 1.0, 1.2, 1.4, 1.3, 1.0, 0.8, 0.6, 0.4, 0.3]
)
_HOUR_OF_MINUTE = np.arange(MINUTES_PER_DAY) // 60


@dataclass
class CohortConfig:
    n_users: int
    t_days: int = 147
    prevalence: tuple[float, ...] = DEFAULT_PREVALENCE
    effects: dict[str, tuple[tuple[str, float], ...]] = field(
        default_factory=lambda: dict(DEFAULT_EFFECTS)
    )
    seed: int = 0
    trace_seed: int | None = None  # defaults to seed

    def validate(self) -> None:
        if self.n_users < 0:
            raise CohortError("n_users must be non-negative")
        if self.t_days < MIN_DAYS:
            raise CohortError(f"t_days must be at least {MIN_DAYS} (got {self.t_days})")
        if len(self.prevalence) != N_CONDITIONS:
            raise CohortError(f"prevalence needs {N_CONDITIONS} values")
        for name, p in zip(CONDITIONS, self.prevalence):
            if not 0.01 < p < 0.9:
                raise CohortError(f"prevalence[{name}]={p} outside (0.01, 0.9)")
        for cond, effects in self.effects.items():
            if cond not in CONDITIONS:
                raise CohortError(f"unknown condition {cond!r} in effects")
            for name, _ in effects:
                if name not in TRACE_EFFECTS | LABEL_EFFECTS:
                    raise CohortError(f"unknown effect {name!r} for {cond}")


def effect_manifest(effects: dict[str, tuple[tuple[str, float], ...]]) -> dict[str, list[dict]]:
    return {
        cond: [{"effect": name, "magnitude": float(mag)} for name, mag in effects.get(cond, ())]
        for cond in CONDITIONS
    }


def _effect(effects, cond: str, name: str, default: float = 0.0) -> float:
    for n, mag in effects.get(cond, ()):
        if n == name:
            return float(mag)
    return default


# ---------------------------------------------------------------------------
# static profile + labels
# ---------------------------------------------------------------------------


def _draw_static(rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
    age = rng.normal(AGE_MEAN, AGE_SD, n)
    bad = (age < 18) | (age > 80)
    while bad.any():
        age[bad] = rng.normal(AGE_MEAN, AGE_SD, bad.sum())
        bad = (age < 18) | (age > 80)
    age = np.round(age).astype(int)
    male = rng.random(n) >= 0.75
    ethnicity = rng.choice(len(ETHNICITIES), n, p=[0.60, 0.13, 0.15, 0.07, 0.01, 0.04])
    education = rng.choice(len(EDUCATION), n, p=[0.05, 0.20, 0.30, 0.30, 0.15])
    parental = rng.random(n) < 1.0 / (1.0 + np.exp(-(age - 32.0) / 6.0))
    height = np.round(np.where(male, 177.0, 163.0) + rng.normal(0.0, 7.0, n), 1)
    bmi_true = np.clip(24.0 + 0.08 * (age - AGE_MEAN) + rng.normal(0.0, 4.5, n), 16.0, 55.0)
    weight = np.round(bmi_true * (height / 100.0) ** 2, 1)
    bmi = np.round(weight / (height / 100.0) ** 2, 2)
    max_weight = np.round(weight + np.abs(rng.normal(0.0, 4.0, n)), 1)
    latent_mh = rng.normal(0.0, 1.0, n)
    return dict(
        age=age, male=male, ethnicity=ethnicity, education=education, parental=parental,
        height=height, weight=weight, bmi=bmi, max_weight=max_weight, latent_mh=latent_mh,
    )


def _label_logit_offsets(static: dict[str, np.ndarray], effects) -> np.ndarray:
    """(n, 9) label logits without intercepts."""
    z_age = (static["age"] - AGE_MEAN) / AGE_SD
    z_bmi = (static["bmi"] - BMI_MEAN) / BMI_SD
    cols = []
    for cond in CONDITIONS:
        cols.append(
            _effect(effects, cond, "latent_mh_loading") * static["latent_mh"]
            + _effect(effects, cond, "logit_age_per_sd") * z_age
            + _effect(effects, cond, "logit_bmi_per_sd") * z_bmi
        )
    return np.stack(cols, axis=1)


def _freeze(effects) -> tuple:
    return tuple(sorted((k, tuple(v)) for k, v in effects.items()))


@lru_cache(maxsize=16)
def _intercepts(prevalence: tuple[float, ...], frozen_effects: tuple) -> np.ndarray:
    """Intercepts putting each condition's population prevalence on target.

    Calibrated on a fixed reference population so the result does not depend
    on the cohort being generated.
    """
    effects = dict(frozen_effects)
    offsets = _label_logit_offsets(_draw_static(np.random.default_rng(20161001), 200_000), effects)
    lo = np.full(N_CONDITIONS, -20.0)
    hi = np.full(N_CONDITIONS, 20.0)
    target = np.asarray(prevalence)
    for _ in range(60):
        mid = (lo + hi) / 2
        mean_p = (1.0 / (1.0 + np.exp(-(offsets + mid)))).mean(axis=0)
        too_high = mean_p > target
        hi = np.where(too_high, mid, hi)
        lo = np.where(too_high, lo, mid)
    return (lo + hi) / 2


# ---------------------------------------------------------------------------
# wear process and minute traces
# ---------------------------------------------------------------------------


def _wear_days(rng: np.random.Generator, t: int, use_rate: float = 1.0) -> np.ndarray:
    worn = rng.random(t) >= 0.1
    for _ in range(rng.integers(0, 3)):
        length = int(rng.integers(2, 6))
        start = int(rng.integers(0, t - length + 1))
        worn[start : start + length] = False
    if use_rate < 1.0:
        worn &= rng.random(t) < use_rate
    return worn


@dataclass
class _TraceParams:
    act_scale: float
    wake_base: float
    end_base: float
    transition_mult: float
    bed_base: float
    dur_base: float
    restless_rate: float
    awakening_rate: float
    jitter: float = 30.0
    flares: float = 0.0
    flare_scale: float = 1.0


def _trace_params(rng: np.random.Generator, labels: np.ndarray, effects) -> _TraceParams:
    p = _TraceParams(
        act_scale=float(np.exp(rng.normal(0.0, 0.3))),
        wake_base=420.0 + rng.normal(0.0, 40.0),
        end_base=1350.0 + rng.normal(0.0, 40.0),
        transition_mult=float(np.exp(rng.normal(0.0, 0.25))),
        bed_base=270.0 + rng.normal(0.0, 45.0),
        dur_base=450.0 + rng.normal(0.0, 35.0),
        restless_rate=2.0 * float(np.exp(rng.normal(0.0, 0.3))),
        awakening_rate=0.8,
    )
    for cond, y in zip(CONDITIONS, labels):
        if not y:
            continue
        p.act_scale *= _effect(effects, cond, "daytime_step_scale", 1.0)
        p.wake_base += _effect(effects, cond, "first_step_delay_min")
        p.transition_mult *= _effect(effects, cond, "transition_rate_multiplier", 1.0)
        p.bed_base += _effect(effects, cond, "bedtime_shift_min")
        p.restless_rate += _effect(effects, cond, "extra_restless_periods")
        p.awakening_rate += _effect(effects, cond, "extra_awakenings")
        p.jitter = float(np.hypot(p.jitter, _effect(effects, cond, "schedule_jitter_min")))
        p.flares += _effect(effects, cond, "flare_episodes")
        p.flare_scale *= _effect(effects, cond, "flare_step_scale", 1.0)
    return p


FLARE_RESTLESS = 3.0


def _flare_days(rng: np.random.Generator, t: int, p: _TraceParams) -> np.ndarray:
    """Days inside a flare: about ``p.flares`` runs of 3 to 6 days."""
    flare = np.zeros(t, dtype=bool)
    if p.flares <= 0:
        return flare
    n = int(rng.integers(max(1, round(p.flares) - 1), round(p.flares) + 2))
    for _ in range(n):
        length = int(rng.integers(3, 7))
        start = int(rng.integers(0, t - length + 1))
        flare[start : start + length] = True
    return flare


def _step_day(rng: np.random.Generator, p: _TraceParams, flare: bool = False) -> np.ndarray:
    wake = int(np.clip(p.wake_base + rng.normal(0.0, p.jitter), 180, 900))
    end = int(np.clip(p.end_base + rng.normal(0.0, p.jitter), wake + 240, MINUTES_PER_DAY - 1))
    act_scale = p.act_scale * (p.flare_scale if flare else 1.0)
    mean_on = 8.0 / p.transition_mult
    mean_off = 16.0 / p.transition_mult
    n_seg = 2 * int((end - wake) / (mean_on + mean_off) + 20)
    means = np.where(np.arange(n_seg) % 2 == 0, mean_on, mean_off)
    lengths = rng.geometric(1.0 / np.maximum(means, 1.0))
    bounds = wake + np.cumsum(lengths)
    minutes = np.arange(MINUTES_PER_DAY)
    seg = np.searchsorted(bounds, minutes, side="right")
    active = (minutes >= wake) & (minutes <= end) & (seg % 2 == 0)
    active[wake] = True

    rate = 22.0 * act_scale * _DIURNAL[_HOUR_OF_MINUTE] * rng.lognormal(0.0, 0.35, MINUTES_PER_DAY)
    steps = np.where(active, np.clip(np.round(rate), 1, MAX_STEPS_PER_MINUTE), 0)
    for _ in range(rng.poisson(0.8 * min(act_scale, 1.5))):
        length = int(rng.integers(10, 41))
        start = int(rng.integers(wake, max(wake + 1, end - length)))
        walk = np.clip(np.round(rng.normal(115.0, 10.0, length)), 1, MAX_STEPS_PER_MINUTE)
        steps[start : start + length] = walk[: MINUTES_PER_DAY - start]
    return steps.astype(np.int16)


def _sleep_night(rng: np.random.Generator, p: _TraceParams, flare: bool = False) -> np.ndarray:
    night = np.zeros(MINUTES_PER_DAY, dtype=np.int8)
    bed = int(np.clip(p.bed_base + rng.normal(0.0, p.jitter), 0, 900))
    dur = int(np.clip(p.dur_base + rng.normal(0.0, 40.0), 180, 720))
    wake = min(bed + dur, MINUTES_PER_DAY)
    night[bed:wake] = 1
    latency = min(int(rng.poisson(10.0)), wake - bed - 1)
    night[bed : bed + latency] = 2
    lo = bed + latency
    for _ in range(rng.poisson(p.restless_rate + (FLARE_RESTLESS if flare else 0.0))):
        start = int(rng.integers(lo, wake))
        night[start : min(start + 1 + int(rng.poisson(3.0)), wake)] = 2
    if wake - lo > 30:
        for _ in range(rng.poisson(p.awakening_rate)):
            start = int(rng.integers(lo + 1, wake - 20))
            night[start : start + 1 + int(rng.poisson(4.0))] = 0
    if rng.random() < 0.07:
        start = int(rng.integers(1140, 1300))
        night[start : start + 20 + int(rng.poisson(20.0))] = 1
    return night


def _in_bed_minutes(night: np.ndarray) -> int:
    return int(np.count_nonzero(night))


def _generate_user(index: int, config: CohortConfig, intercepts: np.ndarray) -> UserData:
    t = config.t_days
    trace_seed = config.seed if config.trace_seed is None else config.trace_seed
    prof_rng = np.random.default_rng([config.seed, index, 0])
    trace_rng = np.random.default_rng([trace_seed, index, 1])

    s = _draw_static(prof_rng, 1)
    logits = _label_logit_offsets(s, config.effects)[0] + intercepts
    labels = (prof_rng.random(N_CONDITIONS) < 1.0 / (1.0 + np.exp(-logits))).astype(int)

    uid = f"u{index:06d}"
    profile = UserProfile(
        user_id=uid,
        age=int(s["age"][0]),
        gender="male" if s["male"][0] else "female",
        ethnicity=ETHNICITIES[int(s["ethnicity"][0])],
        education=EDUCATION[int(s["education"][0])],
        parental_status=bool(s["parental"][0]),
        weight=float(s["weight"][0]),
        max_weight=float(s["max_weight"][0]),
        height=float(s["height"][0]),
        bmi=float(s["bmi"][0]),
        labels=tuple(int(v) for v in labels),
    )

    wore_step = _wear_days(trace_rng, t)
    wore_sleep = _wear_days(trace_rng, t)
    wore_weight = _wear_days(trace_rng, t, use_rate=0.35)
    params = _trace_params(trace_rng, labels, config.effects)
    flare = _flare_days(trace_rng, t, params)

    step_dates = np.flatnonzero(wore_step).astype(np.int32)
    sleep_dates = np.flatnonzero(wore_sleep).astype(np.int32)
    step_values = np.zeros((len(step_dates), MINUTES_PER_DAY), dtype=np.int16)
    sleep_values = np.zeros((len(sleep_dates), MINUTES_PER_DAY), dtype=np.int8)
    for i in range(len(step_dates)):
        step_values[i] = _step_day(trace_rng, params, bool(flare[step_dates[i]]))
    for i in range(len(sleep_dates)):
        sleep_values[i] = _sleep_night(trace_rng, params, bool(flare[sleep_dates[i]]))
    day_weights = np.round(profile.weight + trace_rng.normal(0.0, 0.8, t), 1)

    step_totals = dict(zip(step_dates.tolist(), step_values.sum(axis=1, dtype=np.int64).tolist()))
    in_bed = dict(zip(sleep_dates.tolist(), np.count_nonzero(sleep_values, axis=1).tolist()))
    days = [
        DayRecord(
            user_id=uid,
            date=d,
            steps_total=int(step_totals[d]) if wore_step[d] else None,
            sleep_minutes=int(in_bed[d]) if wore_sleep[d] else None,
            weight=float(day_weights[d]) if wore_weight[d] else None,
            wore_step=bool(wore_step[d]),
            wore_sleep=bool(wore_sleep[d]),
            wore_weight=bool(wore_weight[d]),
        )
        for d in range(t)
    ]
    return UserData(profile, days, step_dates, step_values, sleep_dates, sleep_values)


def generate_cohort(config: CohortConfig, workers: int = 1) -> Cohort:
    """Generate a synthetic cohort. Output depends only on ``config``."""
    config.validate()
    if config.n_users == 0:
        return Cohort([], config.t_days, {})
    intercepts = _intercepts(tuple(float(p) for p in config.prevalence), _freeze(config.effects))
    if workers > 1:
        from joblib import Parallel, delayed

        users = Parallel(n_jobs=workers)(
            delayed(_generate_user)(i, config, intercepts) for i in range(config.n_users)
        )
    else:
        users = [_generate_user(i, config, intercepts) for i in range(config.n_users)]
    return Cohort(users, config.t_days, effect_manifest(config.effects))


def with_random_labels(cohort: Cohort, prevalence=DEFAULT_PREVALENCE, seed: int = 0) -> Cohort:
    """Copy of ``cohort`` whose labels are independent Bernoulli draws (null signal)."""
    rng = np.random.default_rng([seed, 7])
    users = []
    for u in cohort.users:
        profile = copy.copy(u.profile)
        profile.labels = tuple(int(v) for v in rng.random(N_CONDITIONS) < np.asarray(prevalence))
        users.append(UserData(profile, u.days, u.step_dates, u.step_values, u.sleep_dates, u.sleep_values))
    return Cohort(users, cohort.t_days, {})
