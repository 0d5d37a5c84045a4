"""Per-day summary statistics from minute-level step and sleep traces.

All extractors work on stacks of days, shape ``(n_days, 1440)``, and return
``(n_days, n_features)`` float arrays with NaN marking statistics that are
undefined for that day (for example the time of the first step on a day
with no steps). Single-trace wrappers return one row.

Sleep traces are indexed from 18:00 of the previous evening, so times of
day in the sleep block are minutes since 18:00.
"""

from __future__ import annotations

import numpy as np

from ..cohort.types import MINUTES_PER_DAY, MinuteTrace

STEP_FEATURES: tuple[str, ...] = (
    "step_total",
    "step_active_minutes",
    "step_minutes_ge30",
    "step_minutes_ge60",
    "step_minutes_ge100",
    "step_max_1min",
    "step_max_6min",
    "step_max_30min",
    "step_first_minute",
    "step_last_minute",
    "step_longest_mean_gt30",
    "step_longest_inactive_run",
    "step_bout_count",
    "step_bout_mean_length",
    "step_bout_max_length",
    "step_bout_minutes",
    "step_transitions",
    "step_nonzero_mean",
    "step_nonzero_std",
    "step_nonzero_median",
    "step_nonzero_p25",
    "step_nonzero_p75",
    "step_00_05",
    "step_05_12",
    "step_12_18",
    "step_18_24",
    "step_half_total_minute",
    "step_hourly_entropy",
    "step_top10pct_fraction",
    "step_mvpa_bouts",
    "step_sedentary_fraction",
)

SLEEP_FEATURES: tuple[str, ...] = (
    "sleep_asleep_minutes",
    "sleep_in_bed_minutes",
    "sleep_efficiency",
    "sleep_bedtime",
    "sleep_wake_time",
    "sleep_onset_latency",
    "sleep_awakenings",
    "sleep_restless_periods",
    "sleep_restless_minutes",
    "sleep_longest_asleep_run",
    "sleep_bouts",
    "sleep_waso",
    "sleep_midpoint",
    "sleep_restless_fraction",
    "sleep_main_bout_minutes",
    "sleep_nap_count",
    "sleep_nap_minutes",
    "sleep_fragmentation",
)

BOUT_MIN_MINUTES = 5
MVPA_MIN_MINUTES = 10
MVPA_STEPS = 100
STREAK_MEAN_STEPS = 30
SLEEP_BOUT_GAP = 60
_CHUNK = 2048


def runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Maximal runs of True per row: (row, start, end) with end exclusive,
    ordered by row then start."""
    n, m = mask.shape
    padded = np.zeros((n, m + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    edges = np.diff(padded, axis=1)
    rows, starts = np.nonzero(edges == 1)
    _, ends = np.nonzero(edges == -1)
    return rows, starts, ends


def _per_row_max(rows: np.ndarray, values: np.ndarray, n: int, empty=0) -> np.ndarray:
    out = np.full(n, empty, dtype=np.float64)
    if len(rows):
        np.maximum.at(out, rows, values)
    return out


def _window_max(x: np.ndarray, width: int) -> np.ndarray:
    c = np.zeros((x.shape[0], x.shape[1] + 1), dtype=np.int64)
    np.cumsum(x, axis=1, out=c[:, 1:])
    return (c[:, width:] - c[:, :-width]).max(axis=1)


def _longest_mean_above(x: np.ndarray, threshold: float) -> np.ndarray:
    """Length of the longest contiguous window with mean > threshold (0 if none).

    A window (i, j] qualifies iff prefix[j] > prefix[i] for prefix sums of
    x - threshold. For each j the earliest qualifying i is found by binary
    search over the running prefix minimum, giving O(n log n) per row.
    """
    n, m = x.shape
    if n == 0:
        return np.zeros(0)
    y = x.astype(np.int64) - int(threshold)
    prefix = np.zeros((n, m + 1), dtype=np.int64)
    np.cumsum(y, axis=1, out=prefix[:, 1:])
    running_min = np.minimum.accumulate(prefix, axis=1)
    span = int(np.abs(prefix).max()) * 2 + 1
    offset = (np.arange(n, dtype=np.int64) * span)[:, None]
    keys = (-running_min + offset).ravel()  # non-decreasing overall
    queries = (-prefix + offset).ravel()
    first = np.searchsorted(keys, queries, side="right").reshape(n, m + 1)
    first -= np.arange(n)[:, None] * (m + 1)
    j = np.arange(m + 1)[None, :]
    length = np.where(first < j, j - first, 0)
    return length.max(axis=1)


def _nonzero_quantiles(x: np.ndarray, qs) -> tuple[np.ndarray, list[np.ndarray]]:
    """Per-row count of nonzero entries and linear-interpolated quantiles of them."""
    k = np.count_nonzero(x, axis=1)
    s = np.sort(np.where(x > 0, x, np.iinfo(np.int64).max).astype(np.int64), axis=1)
    rows = np.arange(x.shape[0])
    out = []
    for q in qs:
        pos = np.maximum(k - 1, 0) * q
        lo = np.floor(pos).astype(int)
        hi = np.ceil(pos).astype(int)
        v_lo = s[rows, lo].astype(np.float64)
        v_hi = s[rows, hi].astype(np.float64)
        out.append(np.where(k > 0, v_lo + (v_hi - v_lo) * (pos - lo), 0.0))
    return k, out


def _step_chunk(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    x = x.astype(np.int64)
    f = np.zeros((n, len(STEP_FEATURES)))
    total = x.sum(axis=1)
    active = x > 0
    any_step = total > 0

    f[:, 0] = total
    f[:, 1] = active.sum(axis=1)
    f[:, 2] = (x >= 30).sum(axis=1)
    f[:, 3] = (x >= 60).sum(axis=1)
    f[:, 4] = (x >= 100).sum(axis=1)
    f[:, 5] = x.max(axis=1)
    f[:, 6] = _window_max(x, 6)
    f[:, 7] = _window_max(x, 30)
    f[:, 8] = np.where(any_step, active.argmax(axis=1), np.nan)
    f[:, 9] = np.where(any_step, MINUTES_PER_DAY - 1 - active[:, ::-1].argmax(axis=1), np.nan)
    f[:, 10] = _longest_mean_above(x, STREAK_MEAN_STEPS)

    r, s, e = runs(~active)
    interior = (s > 0) & (e < MINUTES_PER_DAY)
    f[:, 11] = _per_row_max(r[interior], (e - s)[interior], n)

    r, s, e = runs(active)
    length = e - s
    bout = length >= BOUT_MIN_MINUTES
    count = np.bincount(r[bout], minlength=n)
    minutes = np.bincount(r[bout], weights=length[bout], minlength=n)
    f[:, 12] = count
    f[:, 13] = np.divide(minutes, count, out=np.zeros(n), where=count > 0)
    f[:, 14] = _per_row_max(r[bout], length[bout], n)
    f[:, 15] = minutes
    f[:, 16] = (active[:, 1:] != active[:, :-1]).sum(axis=1)

    k, (med, p25, p75) = _nonzero_quantiles(x, (0.5, 0.25, 0.75))
    mean_nz = np.divide(total, k, out=np.zeros(n), where=k > 0)
    sq = (x * x).sum(axis=1)
    var_nz = np.divide(sq, k, out=np.zeros(n), where=k > 0) - mean_nz**2
    f[:, 17] = mean_nz
    f[:, 18] = np.sqrt(np.maximum(var_nz, 0.0))
    f[:, 19] = med
    f[:, 20] = p25
    f[:, 21] = p75

    f[:, 22] = x[:, 0:300].sum(axis=1)
    f[:, 23] = x[:, 300:720].sum(axis=1)
    f[:, 24] = x[:, 720:1080].sum(axis=1)
    f[:, 25] = x[:, 1080:].sum(axis=1)

    cum = np.cumsum(x, axis=1)
    f[:, 26] = np.where(any_step, (2 * cum >= total[:, None]).argmax(axis=1), np.nan)

    hourly = x.reshape(n, 24, 60).sum(axis=2)
    p = np.divide(hourly, total[:, None], out=np.zeros((n, 24)), where=total[:, None] > 0)
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    f[:, 27] = -plogp.sum(axis=1)

    top = -np.sort(-x, axis=1)[:, : MINUTES_PER_DAY // 10].sum(axis=1)
    f[:, 28] = np.divide(top, total, out=np.zeros(n), where=any_step)

    r, s, e = runs(x >= MVPA_STEPS)
    f[:, 29] = np.bincount(r[(e - s) >= MVPA_MIN_MINUTES], minlength=n)
    f[:, 30] = (~active).sum(axis=1) / MINUTES_PER_DAY
    return f


def _sleep_chunk(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    f = np.zeros((n, len(SLEEP_FEATURES)))
    asleep = x == 1
    restless = x == 2
    in_bed = x > 0
    n_asleep = asleep.sum(axis=1)
    n_bed = in_bed.sum(axis=1)
    n_restless = restless.sum(axis=1)
    has_bed = n_bed > 0
    has_sleep = n_asleep > 0

    f[:, 0] = n_asleep
    f[:, 1] = n_bed
    f[:, 2] = np.divide(n_asleep, n_bed, out=np.zeros(n), where=has_bed)
    bedtime = in_bed.argmax(axis=1)
    f[:, 3] = bedtime
    f[:, 4] = MINUTES_PER_DAY - 1 - in_bed[:, ::-1].argmax(axis=1)
    f[:, 5] = np.where(has_sleep, asleep.argmax(axis=1) - bedtime, np.nan)

    rb, sb, eb = runs(in_bed)
    n_bed_runs = np.bincount(rb, minlength=n)
    f[:, 6] = np.maximum(n_bed_runs - 1, 0)
    rr, _, _ = runs(restless)
    f[:, 7] = np.bincount(rr, minlength=n)
    f[:, 8] = n_restless
    ra, sa, ea = runs(asleep)
    f[:, 9] = _per_row_max(ra, ea - sa, n)

    # merge in-bed runs separated by < SLEEP_BOUT_GAP minutes into bouts
    main_dur = np.zeros(n)
    waso = np.zeros(n)
    n_bouts = np.zeros(n)
    total_dur = np.zeros(n)
    if len(rb):
        new = np.ones(len(rb), dtype=bool)
        new[1:] = (rb[1:] != rb[:-1]) | (sb[1:] - eb[:-1] >= SLEEP_BOUT_GAP)
        first = np.flatnonzero(new)
        b_row = rb[first]
        b_start = sb[first]
        b_end = np.maximum.reduceat(eb, first)
        b_bed = np.add.reduceat(eb - sb, first)
        b_dur = b_end - b_start
        n_bouts = np.bincount(b_row, minlength=n).astype(float)
        total_dur = np.bincount(b_row, weights=b_dur, minlength=n)
        order = np.lexsort((b_start, -b_dur, b_row))
        is_first = np.ones(len(order), dtype=bool)
        is_first[1:] = b_row[order][1:] != b_row[order][:-1]
        main = order[is_first]
        main_dur[b_row[main]] = b_dur[main]
        waso[b_row[main]] = b_dur[main] - b_bed[main]
    f[:, 10] = n_bouts
    f[:, 11] = waso

    cum = np.cumsum(asleep, axis=1)
    f[:, 12] = np.where(has_sleep, (2 * cum >= n_asleep[:, None]).argmax(axis=1), np.nan)
    f[:, 13] = np.divide(n_restless, n_bed, out=np.zeros(n), where=has_bed)
    f[:, 14] = main_dur
    f[:, 15] = np.maximum(n_bouts - 1, 0)
    f[:, 16] = total_dur - main_dur
    f[:, 17] = np.divide(f[:, 6] + f[:, 7], n_bed / 60.0, out=np.zeros(n), where=has_bed)

    keep = np.zeros(len(SLEEP_FEATURES), dtype=bool)
    keep[[6, 7, 15]] = True
    f[np.ix_(~has_bed, ~keep)] = np.nan
    return f


def _chunked(fn, values: np.ndarray, width: int) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[1] != MINUTES_PER_DAY:
        raise ValueError(f"expected (n_days, {MINUTES_PER_DAY}) traces, got {values.shape}")
    if len(values) == 0:
        return np.zeros((0, width))
    return np.concatenate([fn(values[i : i + _CHUNK]) for i in range(0, len(values), _CHUNK)])


def step_feature_matrix(values: np.ndarray) -> np.ndarray:
    return _chunked(_step_chunk, values, len(STEP_FEATURES))


def sleep_feature_matrix(values: np.ndarray) -> np.ndarray:
    return _chunked(_sleep_chunk, values, len(SLEEP_FEATURES))


def extract_step_features(trace: MinuteTrace) -> np.ndarray:
    """The 31 step statistics for one day (NaN = undefined)."""
    if trace.kind != "step":
        raise ValueError(f"expected a step trace, got {trace.kind!r}")
    return step_feature_matrix(trace.values[None, :])[0]


def extract_sleep_features(trace: MinuteTrace) -> np.ndarray:
    """The 18 sleep statistics for one night (NaN = undefined)."""
    if trace.kind != "sleep":
        raise ValueError(f"expected a sleep trace, got {trace.kind!r}")
    return sleep_feature_matrix(trace.values[None, :])[0]
