"""On-disk cohort format.

A cohort directory holds five files:

``profiles.jsonl``
    one JSON object per user (UserProfile fields, labels as a 0/1 array).
``days.csv``
    ``user_id,date,steps_total,sleep_minutes,weight,wore_step,wore_sleep,wore_weight``;
    missing values are empty, booleans are 0/1.
``steps.csv``
    ``user_id,date,minute,steps``, nonzero minutes only.
``sleep.csv``
    ``user_id,date,minute,state``, rows with state != 0 only.
``manifest.json``
    planted effects, condition -> list of {effect, magnitude}.

A minute trace exists for a day exactly when the matching wear flag in
``days.csv`` is set; its minutes default to zero unless listed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .types import (
    CONDITIONS,
    EDUCATION,
    ETHNICITIES,
    GENDERS,
    MAX_STEPS_PER_MINUTE,
    MINUTES_PER_DAY,
    Cohort,
    CohortError,
    DayRecord,
    UserData,
    UserProfile,
)

PROFILE_FIELDS = (
    "user_id", "age", "gender", "ethnicity", "education", "parental_status",
    "weight", "max_weight", "height", "bmi", "labels",
)
DAY_COLUMNS = [
    "user_id", "date", "steps_total", "sleep_minutes", "weight",
    "wore_step", "wore_sleep", "wore_weight",
]
COHORT_FILES = ("profiles.jsonl", "days.csv", "steps.csv", "sleep.csv", "manifest.json")


class CohortFormatError(CohortError):
    def __init__(self, path: Path | str, line: int, field: str, problem: str):
        self.path, self.line, self.field = str(path), line, field
        super().__init__(f"{path}:{line}: field '{field}': {problem}")


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _profile_json(p: UserProfile) -> str:
    obj = {
        "user_id": p.user_id,
        "age": p.age,
        "gender": p.gender,
        "ethnicity": p.ethnicity,
        "education": p.education,
        "parental_status": p.parental_status,
        "weight": p.weight,
        "max_weight": p.max_weight,
        "height": p.height,
        "bmi": p.bmi,
        "labels": list(p.labels),
    }
    return json.dumps(obj)


def _trace_frame(cohort: Cohort, kind: str) -> pd.DataFrame:
    value_col = "steps" if kind == "step" else "state"
    parts = []
    for u in cohort.users:
        dates, values = (
            (u.step_dates, u.step_values) if kind == "step" else (u.sleep_dates, u.sleep_values)
        )
        rows, minutes = np.nonzero(values)
        parts.append(
            pd.DataFrame(
                {
                    "user_id": u.user_id,
                    "date": dates[rows].astype(np.int64),
                    "minute": minutes.astype(np.int64),
                    value_col: values[rows, minutes].astype(np.int64),
                }
            )
        )
    if not parts:
        return pd.DataFrame(columns=["user_id", "date", "minute", value_col])
    return pd.concat(parts, ignore_index=True)


def write_cohort(cohort: Cohort, directory: str | Path) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "profiles.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for p in cohort.profiles:
            fh.write(_profile_json(p) + "\n")

    days = cohort.day_records
    df = pd.DataFrame(
        {
            "user_id": [d.user_id for d in days],
            "date": pd.array([d.date for d in days], dtype="Int64"),
            "steps_total": pd.array([d.steps_total for d in days], dtype="Int64"),
            "sleep_minutes": pd.array([d.sleep_minutes for d in days], dtype="Int64"),
            "weight": pd.array([d.weight for d in days], dtype="Float64"),
            "wore_step": pd.array([int(d.wore_step) for d in days], dtype="Int64"),
            "wore_sleep": pd.array([int(d.wore_sleep) for d in days], dtype="Int64"),
            "wore_weight": pd.array([int(d.wore_weight) for d in days], dtype="Int64"),
        },
        columns=DAY_COLUMNS,
    )
    df.to_csv(out / "days.csv", index=False, na_rep="", lineterminator="\n")
    _trace_frame(cohort, "step").to_csv(out / "steps.csv", index=False, lineterminator="\n")
    _trace_frame(cohort, "sleep").to_csv(out / "sleep.csv", index=False, lineterminator="\n")
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cohort.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------


def _parse_profile(obj: dict, path: Path, line: int) -> UserProfile:
    if not isinstance(obj, dict):
        raise CohortFormatError(path, line, "<record>", "expected a JSON object")
    for key in PROFILE_FIELDS:
        if key not in obj:
            raise CohortFormatError(path, line, key, "missing")

    def number(key: str) -> float:
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise CohortFormatError(path, line, key, f"expected a number, got {v!r}")
        return float(v)

    age = obj["age"]
    if isinstance(age, bool) or not isinstance(age, int) or age < 18:
        raise CohortFormatError(path, line, "age", f"expected integer >= 18, got {age!r}")
    for key, levels in (("gender", GENDERS), ("ethnicity", ETHNICITIES), ("education", EDUCATION)):
        if obj[key] not in levels:
            raise CohortFormatError(path, line, key, f"unknown level {obj[key]!r}")
    if not isinstance(obj["parental_status"], bool):
        raise CohortFormatError(path, line, "parental_status", "expected true/false")
    labels = obj["labels"]
    if (
        not isinstance(labels, list)
        or len(labels) != len(CONDITIONS)
        or any(v not in (0, 1) or isinstance(v, bool) for v in labels)
    ):
        raise CohortFormatError(path, line, "labels", f"expected {len(CONDITIONS)} 0/1 values")
    return UserProfile(
        user_id=str(obj["user_id"]),
        age=age,
        gender=obj["gender"],
        ethnicity=obj["ethnicity"],
        education=obj["education"],
        parental_status=obj["parental_status"],
        weight=number("weight"),
        max_weight=number("max_weight"),
        height=number("height"),
        bmi=number("bmi"),
        labels=tuple(int(v) for v in labels),
    )


def _read_csv(path: Path, columns: list[str]) -> pd.DataFrame:
    if not path.exists():
        raise CohortError(f"missing file {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(df.columns) != columns:
        raise CohortFormatError(path, 1, "<header>", f"expected {','.join(columns)}")
    return df


def _read_int_csv(path: Path, columns: list[str]) -> pd.DataFrame | None:
    """Fast typed read; None when any value fails to parse as an integer."""
    if not path.exists():
        raise CohortError(f"missing file {path}")
    dtypes = {c: np.int64 for c in columns[1:]}
    dtypes[columns[0]] = str
    try:
        df = pd.read_csv(path, dtype=dtypes, keep_default_na=False)
    except (ValueError, TypeError):
        return None
    if list(df.columns) != columns:
        raise CohortFormatError(path, 1, "<header>", f"expected {','.join(columns)}")
    return df


def _int_column(
    df: pd.DataFrame, col: str, path: Path, *, optional: bool = False, lo=None, hi=None
) -> np.ndarray:
    """Parse an integer column; missing entries become -1 when ``optional``."""
    raw = df[col]
    empty = raw.str.len() == 0
    parsed = pd.to_numeric(raw.where(~empty, None), errors="coerce")
    bad = parsed.isna() & ~empty
    bad |= parsed.notna() & (parsed != np.floor(parsed))
    if not optional:
        bad |= empty
    if lo is not None:
        bad |= parsed.notna() & (parsed < lo)
    if hi is not None:
        bad |= parsed.notna() & (parsed > hi)
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        rng = f" in [{lo}, {hi}]" if lo is not None else ""
        raise CohortFormatError(path, i + 2, col, f"expected integer{rng}, got {raw.iloc[i]!r}")
    return parsed.fillna(-1).to_numpy(dtype=np.int64)


def _float_column(df: pd.DataFrame, col: str, path: Path) -> np.ndarray:
    raw = df[col]
    empty = raw.str.len() == 0
    parsed = pd.to_numeric(raw.where(~empty, None), errors="coerce")
    bad = parsed.isna() & ~empty
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise CohortFormatError(path, i + 2, col, f"expected number, got {raw.iloc[i]!r}")
    return parsed.to_numpy(dtype=np.float64)


def _read_traces(
    path: Path, kind: str, users: dict[str, int], worn: dict[str, np.ndarray], t_days: int
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    value_col = "steps" if kind == "step" else "state"
    columns = ["user_id", "date", "minute", value_col]
    hi = MAX_STEPS_PER_MINUTE if kind == "step" else 2
    df = _read_int_csv(path, columns)
    if df is not None:
        date, minute, value = (df[c].to_numpy() for c in columns[1:])
        clean = (
            date.min(initial=0) >= 0
            and minute.min(initial=0) >= 0
            and minute.max(initial=0) < MINUTES_PER_DAY
            and value.min(initial=0) >= 0
            and value.max(initial=0) <= hi
        )
    if df is None or not clean:
        # slow path, only to locate the offending line
        df = _read_csv(path, columns)
        date = _int_column(df, "date", path, lo=0)
        minute = _int_column(df, "minute", path, lo=0, hi=MINUTES_PER_DAY - 1)
        value = _int_column(df, value_col, path, lo=0, hi=hi)
    uid = df["user_id"].to_numpy()

    dtype = np.int16 if kind == "step" else np.int8
    out = {}
    for u, flags in worn.items():
        dates = np.flatnonzero(flags).astype(np.int32)
        out[u] = (dates, np.zeros((len(dates), MINUTES_PER_DAY), dtype=dtype))
    if len(df) == 0:
        return out

    codes = pd.Series(uid).map(users)
    unknown = codes.isna().to_numpy()
    if unknown.any():
        i = int(np.flatnonzero(unknown)[0])
        raise CohortFormatError(path, i + 2, "user_id", f"unknown user {uid[i]!r}")
    order = np.lexsort((minute, date, codes.to_numpy()))
    key = np.stack([codes.to_numpy()[order], date[order], minute[order]], axis=1)
    dup = np.flatnonzero((np.diff(key, axis=0) == 0).all(axis=1))
    if len(dup):
        i = int(order[dup[0] + 1])
        raise CohortFormatError(path, i + 2, "minute", "duplicate (user_id, date, minute) row")

    for u, idx in pd.Series(np.arange(len(df))).groupby(uid, sort=False):
        rows = idx.to_numpy()
        dates, values = out[u]
        pos = np.searchsorted(dates, date[rows])
        pos_c = np.minimum(pos, max(len(dates) - 1, 0))
        missing = (pos >= len(dates)) | (dates[pos_c] != date[rows]) if len(dates) else np.ones(len(rows), bool)
        if missing.any():
            i = int(rows[np.flatnonzero(missing)[0]])
            flag = "wore_step" if kind == "step" else "wore_sleep"
            raise CohortFormatError(
                path, i + 2, "date", f"trace row for a day without {flag} (date {date[i]})"
            )
        values[pos, minute[rows]] = value[rows]
    return out


def read_cohort(directory: str | Path) -> Cohort:
    src = Path(directory)
    if not src.is_dir():
        raise CohortError(f"cohort directory {src} does not exist")

    profiles: list[UserProfile] = []
    ppath = src / "profiles.jsonl"
    if not ppath.exists():
        raise CohortError(f"missing file {ppath}")
    with open(ppath, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CohortFormatError(ppath, line_no, "<record>", f"invalid JSON ({exc.msg})")
            profiles.append(_parse_profile(obj, ppath, line_no))
    users = {p.user_id: i for i, p in enumerate(profiles)}
    if len(users) != len(profiles):
        raise CohortError(f"{ppath}: duplicate user_id")

    dpath = src / "days.csv"
    df = _read_csv(dpath, DAY_COLUMNS)
    date = _int_column(df, "date", dpath, lo=0)
    steps_total = _int_column(df, "steps_total", dpath, optional=True, lo=0)
    sleep_minutes = _int_column(df, "sleep_minutes", dpath, optional=True, lo=0, hi=MINUTES_PER_DAY)
    weight = _float_column(df, "weight", dpath)
    flags = {c: _int_column(df, c, dpath, lo=0, hi=1).astype(bool) for c in DAY_COLUMNS[5:]}
    uid = df["user_id"].to_numpy()
    for col, flag in (("steps_total", "wore_step"), ("sleep_minutes", "wore_sleep")):
        values = steps_total if col == "steps_total" else sleep_minutes
        bad = ~flags[flag] & (values >= 0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise CohortFormatError(dpath, i + 2, col, f"value present but {flag}=0")
    bad = ~flags["wore_weight"] & ~np.isnan(weight)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise CohortFormatError(dpath, i + 2, "weight", "value present but wore_weight=0")
    unknown = np.array([u not in users for u in uid], dtype=bool)
    if unknown.any():
        i = int(np.flatnonzero(unknown)[0])
        raise CohortFormatError(dpath, i + 2, "user_id", f"unknown user {uid[i]!r}")

    t_days = int(date.max()) + 1 if len(date) else 0
    per_user_days: dict[str, list[DayRecord]] = {u: [] for u in users}
    for i in range(len(df)):
        per_user_days[uid[i]].append(
            DayRecord(
                user_id=uid[i],
                date=int(date[i]),
                steps_total=int(steps_total[i]) if steps_total[i] >= 0 else None,
                sleep_minutes=int(sleep_minutes[i]) if sleep_minutes[i] >= 0 else None,
                weight=float(weight[i]) if not np.isnan(weight[i]) else None,
                wore_step=bool(flags["wore_step"][i]),
                wore_sleep=bool(flags["wore_sleep"][i]),
                wore_weight=bool(flags["wore_weight"][i]),
            )
        )
    worn_step, worn_sleep = {}, {}
    for u, days in per_user_days.items():
        days.sort(key=lambda d: d.date)
        ws = np.zeros(t_days, dtype=bool)
        wl = np.zeros(t_days, dtype=bool)
        for d in days:
            ws[d.date] |= d.wore_step
            wl[d.date] |= d.wore_sleep
        worn_step[u], worn_sleep[u] = ws, wl

    steps = _read_traces(src / "steps.csv", "step", users, worn_step, t_days)
    sleep = _read_traces(src / "sleep.csv", "sleep", users, worn_sleep, t_days)

    mpath = src / "manifest.json"
    if not mpath.exists():
        raise CohortError(f"missing file {mpath}")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)

    cohort_users = [
        UserData(p, per_user_days[p.user_id], *steps[p.user_id], *sleep[p.user_id])
        for p in profiles
    ]
    return Cohort(cohort_users, t_days, manifest)
