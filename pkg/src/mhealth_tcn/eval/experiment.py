"""Classifier and data-layer comparison experiments."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..autonet.model import ModelConfig, predict
from ..baselines import L2_GRID, LRConfig, aggregate_features, lr_predict, lr_select, rf_predict, rf_train
from ..cohort.types import CONDITIONS, N_CONDITIONS
from ..pipeline.frames import LAYERS, FeatureFrame, Layer
from ..pipeline.norm import apply_norm, fit_norm
from ..train import TrainConfig, train_model
from .folds import FoldPlan
from .metrics import AUCError, auc
from .stats import StatsError, mean_and_se, paired_t_test

log = logging.getLogger(__name__)

CLASSIFIERS = ("mt_cnn", "st_cnn", "lr_raw", "lr_feat", "rf")
MHNS_TASKS = tuple(range(6))
MC_TASKS = tuple(range(6, 9))
SCOPES = {"all": tuple(range(N_CONDITIONS)), "mh_ns": MHNS_TASKS, "m_c": MC_TASKS}


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)  # ModelConfig overrides besides D, T, n_tasks
    lr_grid: tuple[float, ...] = L2_GRID
    lr_max_iter: int = 1000
    rf_trees: int = 200
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_grid"] = list(self.lr_grid)
        return d


@dataclass(frozen=True)
class Cell:
    classifier: str
    layer: str
    task: int
    fold: int
    auc: float
    status: str = "ok"  # or the failure message

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class Comparison:
    kind: str  # "classifier" or "layer"
    scope: str
    a: str
    b: str
    layer_a: str
    layer_b: str
    n_pairs: int
    n_excluded: int
    mean_diff: float
    t: float
    p: float


@dataclass
class EvalReport:
    cells: list[Cell]
    comparisons: list[Comparison]
    config: dict
    prevalences: list[dict]

    def values(self, classifier: str, layer: str, tasks=None) -> dict[tuple[int, int], float]:
        """(task, fold) -> AUC for the successful cells of one classifier/layer."""
        tasks = set(range(N_CONDITIONS) if tasks is None else tasks)
        return {
            (c.task, c.fold): c.auc
            for c in self.cells
            if c.classifier == classifier and c.layer == layer and c.task in tasks and c.ok
        }

    def mean_auc(self, classifier: str, layer: str, tasks=None) -> tuple[float, float]:
        """Mean and standard error over (task, fold) cells."""
        return mean_and_se(list(self.values(classifier, layer, tasks).values()))

    def compare(self, a: tuple[str, str], b: tuple[str, str], tasks=None) -> tuple[int, int, float, float, float]:
        """Paired test of (classifier, layer) a vs b over shared (task, fold) cells.

        Returns (n_pairs, n_excluded, mean difference, t, p).
        """
        va, vb = self.values(*a, tasks), self.values(*b, tasks)
        keys = sorted(set(va) & set(vb))
        excluded = len(self._keys(a, b, tasks) - set(keys))
        if len(keys) < 2:
            return len(keys), excluded, float("nan"), float("nan"), float("nan")
        xa = np.array([va[k] for k in keys])
        xb = np.array([vb[k] for k in keys])
        t, p = paired_t_test(xa, xb)
        return len(keys), excluded, float((xa - xb).mean()), t, p

    def _keys(self, a, b, tasks) -> set[tuple[int, int]]:
        # every (task, fold) either side attempted, failed or not
        tasks = set(range(N_CONDITIONS) if tasks is None else tasks)
        return {(c.task, c.fold) for c in self.cells if c.task in tasks and (c.classifier, c.layer) in (a, b)}

    def summary_rows(self) -> list[dict]:
        out = []
        seen = []
        for c in self.cells:
            if (c.classifier, c.layer) not in seen:
                seen.append((c.classifier, c.layer))
        for clf, layer in seen:
            row = {"classifier": clf, "layer": layer}
            for scope, tasks in SCOPES.items():
                m, se = self.mean_auc(clf, layer, tasks)
                row[f"{scope}_mean"], row[f"{scope}_se"] = m, se
            for t, name in enumerate(CONDITIONS):
                row[name] = self.mean_auc(clf, layer, [t])[0]
            out.append(row)
        return out


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def _seed(base: int, *parts: int) -> int:
    return int(np.random.SeedSequence([base, *parts]).generate_state(1)[0])


def _score_cells(clf, layer, fold, probs, y_test, tasks) -> list[Cell]:
    cells = []
    for j, task in enumerate(tasks):
        try:
            cells.append(Cell(clf, layer, task, fold, auc(probs[:, j], y_test[:, task])))
        except AUCError as exc:
            cells.append(Cell(clf, layer, task, fold, float("nan"), str(exc)))
    return cells


def _failed_cells(clf, layer, fold, tasks, exc) -> list[Cell]:
    log.warning("%s at %s fold %d failed: %s", clf, layer, fold, exc)
    return [Cell(clf, layer, t, fold, float("nan"), f"{type(exc).__name__}: {exc}") for t in tasks]


def _cnn_cells(clf, layer, fold, xs, ys, cfg: ExperimentConfig, layer_idx: int) -> list[Cell]:
    (xtr, xva, xte), (ytr, yva, yte) = xs, ys
    _, t, d = xtr.shape
    all_tasks = list(range(N_CONDITIONS))
    if clf == "mt_cnn":
        jobs = [(None, all_tasks)]
    else:
        jobs = [(task, [task]) for task in all_tasks]
    cells = []
    for task, tasks in jobs:
        try:
            mcfg = ModelConfig(n_channels=d, t_days=t, n_tasks=len(tasks), **cfg.model)
            tcfg = replace(
                cfg.train,
                task=task,
                seed=_seed(cfg.seed, fold, CLASSIFIERS.index(clf), layer_idx, N_CONDITIONS if task is None else task),
            )
            params, _ = train_model(xtr, ytr, xva, yva, mcfg, tcfg)
            probs = predict(params, mcfg, np.ascontiguousarray(xte.transpose(0, 2, 1)))
            cells += _score_cells(clf, layer, fold, probs, yte, tasks)
        except (ValueError, FloatingPointError) as exc:
            cells += _failed_cells(clf, layer, fold, tasks, exc)
    return cells


def _baseline_cells(clf, layer, fold, xs, ys, cfg: ExperimentConfig) -> list[Cell]:
    (xtr, xva, xte), (ytr, yva, yte) = xs, ys
    all_tasks = list(range(N_CONDITIONS))
    try:
        if clf == "lr_raw":
            ftr, fva, fte = (x.reshape(len(x), -1) for x in (xtr, xva, xte))
        else:
            ftr, fva, fte = (aggregate_features(x) for x in (xtr, xva, xte))
        if clf in ("lr_raw", "lr_feat"):
            models = lr_select(ftr, ytr, fva, yva, cfg.lr_grid, LRConfig(max_iter=cfg.lr_max_iter))
            probs = np.stack([lr_predict(m, fte) for m in models], axis=1)
            return _score_cells(clf, layer, fold, probs, yte, all_tasks)
        cells = []
        for task in all_tasks:
            try:
                forest = rf_train(ftr, ytr[:, task], cfg.rf_trees, seed=_seed(cfg.seed, fold, 4, task) % 2**31)
                cells += _score_cells(clf, layer, fold, rf_predict(forest, fte)[:, None], yte, [task])
            except ValueError as exc:
                cells += _failed_cells(clf, layer, fold, [task], exc)
        return cells
    except ValueError as exc:
        return _failed_cells(clf, layer, fold, all_tasks, exc)


def _fold_cells(fold_idx, split_idx, x_full, y, names, classifiers, layers, cfg) -> list[Cell]:
    top = max(layers, key=LAYERS.index)
    cells = []
    for layer in layers:
        d = layer.dims
        x = x_full[..., :d]
        stats = fit_norm(x[split_idx[0]], names[:d])
        xn = apply_norm(x, stats)
        xs = tuple(xn[i] for i in split_idx)
        ys = tuple(y[i] for i in split_idx)
        for clf in classifiers:
            if clf != "mt_cnn" and layer != top:
                continue
            if clf in ("mt_cnn", "st_cnn"):
                cells += _cnn_cells(clf, layer.value, fold_idx, xs, ys, cfg, LAYERS.index(layer))
            else:
                cells += _baseline_cells(clf, layer.value, fold_idx, xs, ys, cfg)
    return cells


def _prevalences(plan: FoldPlan, y: np.ndarray, index: dict[str, int]) -> list[dict]:
    out = []
    for i, f in enumerate(plan.folds):
        entry = {"fold": i}
        for name, ids in (("train", f.train), ("val", f.val), ("test", f.test)):
            rows = [index[u] for u in ids]
            entry[name] = {c: float(v) for c, v in zip(CONDITIONS, y[rows].mean(axis=0))}
        out.append(entry)
    return out


def run_experiment(
    frames: list[FeatureFrame],
    labels: np.ndarray,
    classifiers,
    layers,
    plan: FoldPlan,
    cfg: ExperimentConfig | None = None,
    workers: int = 1,
) -> EvalReport:
    """Train and score every classifier on every fold.

    ``frames`` are assembled at the fullest requested layer (or above) and
    sliced down for the lower layers, so every layer sees the same users.
    All classifiers run at the fullest requested layer; the MT CNN also
    runs at every other requested layer.
    """
    cfg = cfg or ExperimentConfig()
    classifiers = [c for c in CLASSIFIERS if c in set(classifiers)]
    unknown = set(classifiers) - set(CLASSIFIERS)
    if unknown or not classifiers:
        raise ExperimentError(f"unknown classifiers {sorted(unknown)}; valid: {', '.join(CLASSIFIERS)}")
    layers = sorted({Layer(layer) for layer in layers}, key=LAYERS.index)
    if not layers:
        raise ExperimentError("no layers requested")
    if not frames:
        raise ExperimentError("no feature frames")
    if frames[0].dims < layers[-1].dims:
        raise ExperimentError(f"frames have {frames[0].dims} features, layer {layers[-1].value} needs {layers[-1].dims}")
    labels = np.asarray(labels)
    index = {f.user_id: i for i, f in enumerate(frames)}
    missing = [u for f in plan.folds for u in f.train + f.val + f.test if u not in index]
    if missing:
        raise ExperimentError(f"{len(missing)} fold users have no frame, e.g. {missing[0]}")
    x_full = np.stack([f.values for f in frames])
    names = frames[0].feature_names
    split_idx = [
        tuple(np.array([index[u] for u in ids], dtype=np.int64) for ids in (f.train, f.val, f.test))
        for f in plan.folds
    ]

    args = [(i, split_idx[i], x_full, labels, names, classifiers, layers, cfg) for i in range(plan.k)]
    if workers > 1 and plan.k > 1:
        from joblib import Parallel, delayed

        per_fold = Parallel(n_jobs=min(workers, plan.k))(delayed(_fold_cells)(*a) for a in args)
    else:
        per_fold = [_fold_cells(*a) for a in args]

    order = {c: i for i, c in enumerate(CLASSIFIERS)}
    lorder = {layer.value: i for i, layer in enumerate(LAYERS)}
    cells = sorted(
        (c for fold in per_fold for c in fold),
        key=lambda c: (order[c.classifier], lorder[c.layer], c.task, c.fold),
    )
    report = EvalReport(
        cells=cells,
        comparisons=[],
        config={
            "classifiers": classifiers,
            "layers": [layer.value for layer in layers],
            "folds": plan.k,
            "fold_seed": plan.seed,
            "n_users": len(frames),
            "t_days": int(x_full.shape[1]),
            "experiment": cfg.to_dict(),
        },
        prevalences=_prevalences(plan, labels, index),
    )
    report.comparisons = _comparisons(report, classifiers, [layer.value for layer in layers])
    return report


def _comparisons(report: EvalReport, classifiers, layers) -> list[Comparison]:
    top = layers[-1]
    out = []
    pairs = [("classifier", (a, top), (b, top)) for i, a in enumerate(classifiers) for b in classifiers[i + 1 :]]
    if "mt_cnn" in classifiers:
        pairs += [
            ("layer", ("mt_cnn", hi), ("mt_cnn", lo))
            for i, lo in enumerate(layers)
            for hi in layers[i + 1 :]
        ]
    for kind, a, b in pairs:
        for scope, tasks in SCOPES.items():
            try:
                n, excl, diff, t, p = report.compare(a, b, tasks)
            except StatsError as exc:
                log.warning("comparison %s vs %s (%s) skipped: %s", a, b, scope, exc)
                n, excl, diff, t, p = 0, 0, math.nan, math.nan, math.nan
            out.append(Comparison(kind, scope, a[0], b[0], a[1], b[1], n, excl, diff, t, p))
    return out


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def _num(x: float):
    # JSON has no NaN/inf; encode them as null
    return None if x is None or not math.isfinite(x) else float(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if x is None or not math.isfinite(x) else repr(float(x))


def write_report(report: EvalReport, out_dir: str | Path) -> tuple[Path, Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells_csv = _csv_text(
        ["classifier", "layer", "task", "fold", "auc", "status"],
        [[c.classifier, c.layer, CONDITIONS[c.task], c.fold, _fmt(c.auc), c.status] for c in report.cells],
    )
    comp_csv = _csv_text(
        ["kind", "scope", "a", "layer_a", "b", "layer_b", "n_pairs", "n_excluded", "mean_diff", "t", "p"],
        [
            [c.kind, c.scope, c.a, c.layer_a, c.b, c.layer_b, c.n_pairs, c.n_excluded,
             _fmt(c.mean_diff), _fmt(c.t), _fmt(c.p)]
            for c in report.comparisons
        ],
    )
    doc = {
        "config": report.config,
        "prevalences": report.prevalences,
        "summary": [{k: (_num(v) if isinstance(v, float) else v) for k, v in r.items()} for r in report.summary_rows()],
        "comparisons": [{k: (_num(v) if isinstance(v, float) else v) for k, v in asdict(c).items()} for c in report.comparisons],
        "cells": [
            {"classifier": c.classifier, "layer": c.layer, "task": CONDITIONS[c.task], "fold": c.fold, "auc": _num(c.auc)}
            for c in report.cells if c.ok
        ],
        "failed_cells": [
            {"classifier": c.classifier, "layer": c.layer, "task": CONDITIONS[c.task], "fold": c.fold, "error": c.status}
            for c in report.cells if not c.ok
        ],
    }
    paths = (out / "report.csv", out / "comparisons.csv", out / "report.json")
    for path, text in zip(paths, (cells_csv, comp_csv, json.dumps(doc, indent=1, sort_keys=True) + "\n")):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return paths
