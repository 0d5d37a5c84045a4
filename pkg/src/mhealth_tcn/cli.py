"""Command-line entry point: generate, featurize, train, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import click
import numpy as np

from .autonet.gradcheck import grad_check, tiny_config
from .autonet.model import ModelConfig
from .cohort import CONDITIONS, CohortConfig, CohortError, eligible_cohort, generate_cohort, read_cohort, write_cohort
from .eval.experiment import CLASSIFIERS, ExperimentConfig, run_experiment, write_report
from .eval.folds import FoldError, make_folds
from .pipeline import LAYERS, Layer, apply_norm, assemble_frames, fit_norm, read_feature_cache, stack_frames, write_feature_cache
from .pipeline.cache import CacheError
from .train import TrainConfig, TrainError, train_model, write_run

log = logging.getLogger("mhealth_tcn")

TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "task")
MODEL_KEYS = tuple(f.name for f in fields(ModelConfig) if f.name not in ("n_channels", "t_days", "n_tasks"))
EXPERIMENT_KEYS = ("lr_max_iter", "rf_trees")
SELF_TEST_CONFIGS = 20
GRAD_TOLERANCE = 1e-4


def _fail_usage(msg: str):
    raise click.UsageError(msg)


def _load_config(path: str | None, allowed: tuple[str, ...]) -> dict:
    """Flat JSON config; unknown keys are a usage error."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail_usage(f"cannot read config {path}: {exc}")
    if not isinstance(data, dict):
        _fail_usage(f"config {path} must be a JSON object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        _fail_usage(f"unknown config keys {unknown}; allowed: {', '.join(allowed)}")
    return data


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_layers(text: str) -> list[Layer]:
    if text == "all":
        return list(LAYERS)
    out = []
    for name in text.split(","):
        try:
            out.append(Layer(name.strip()))
        except ValueError:
            _fail_usage(f"unknown layer {name!r}; valid: all, {', '.join(l.value for l in LAYERS)}")
    return out


def _load_eligible(data: str):
    if not Path(data).is_dir():
        _fail_usage(f"data directory {data} does not exist")
    try:
        cohort = read_cohort(data)
    except CohortError as exc:
        _fail_usage(str(exc))
    return eligible_cohort(cohort)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Multi-task temporal CNN over wearable data: synthetic cohorts, features, training, evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--n-users", type=int, required=True, help="Number of users to simulate.")
@click.option("--days", type=int, default=147, show_default=True, help="Window length in days (>= 14).")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed.")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output cohort directory.")
@click.option("--workers", type=int, default=os.cpu_count() or 1, show_default=True, help="Parallel worker processes.")
def generate(n_users: int, days: int, seed: int, out: str, workers: int) -> None:
    """Write a synthetic cohort (five files) to OUT and echo its config to stdout."""
    cfg = CohortConfig(n_users=n_users, t_days=days, seed=seed)
    try:
        cfg.validate()
    except CohortError as exc:
        _fail_usage(str(exc))
    write_cohort(generate_cohort(cfg, workers=workers), out)
    click.echo(json.dumps({"n_users": n_users, "days": days, "seed": seed, "out": out}, sort_keys=True))


@main.command()
@click.option("--data", type=click.Path(), required=True, help="Cohort directory.")
@click.option("--layer", default="minute_sleep", show_default=True, help="Data layer, or 'all'.")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Feature cache directory.")
def featurize(data: str, layer: str, out: str) -> None:
    """Assemble per-user feature frames for eligible users and cache them."""
    layers = _parse_layers(layer)
    cohort = _load_eligible(data)
    for lay in layers:
        frames = assemble_frames(cohort, lay)
        labels = cohort.subset([f.user_id for f in frames]).labels() if frames else np.zeros((0, 9))
        write_feature_cache(frames, labels, out, lay, cohort.t_days)
        click.echo(f"{lay.value}: {len(frames)} users, D={lay.dims}, T={cohort.t_days}")


@main.command()
@click.option("--features", type=click.Path(), help="Feature cache directory.")
@click.option("--layer", default="minute_sleep", show_default=True, help="Data layer to train on.")
@click.option("--mode", type=click.Choice(["st", "mt"]), default="mt", show_default=True, help="Single- or multi-task.")
@click.option("--task", type=click.Choice(CONDITIONS), help="Condition to train in st mode.")
@click.option("--config", "config_path", type=click.Path(), help="JSON file with train/model settings.")
@click.option("--seed", type=int, help="Overrides the config seed (default 0).")
@click.option("--out", type=click.Path(file_okay=False), help="Run directory.")
@click.option("--self-test", is_flag=True, help="Only run the finite-difference gradient check.")
def train(features, layer, mode, task, config_path, seed, out, self_test) -> None:
    """Train a CNN on a 75/25 train/validation split of the cached users."""
    if self_test:
        worst = 0.0
        for i in range(SELF_TEST_CONFIGS):
            cfg = tiny_config(np.random.default_rng(i), n_tasks=1 if i % 2 else 9)
            worst = max(worst, grad_check(cfg, seed=i))
        ok = worst < GRAD_TOLERANCE
        click.echo(f"grad check over {SELF_TEST_CONFIGS} configs: max relative error {worst:.3e} ({'ok' if ok else 'FAIL'})")
        sys.exit(0 if ok else 1)
    if features is None or out is None:
        _fail_usage("--features and --out are required unless --self-test is given")
    if mode == "st" and task is None:
        _fail_usage("--mode st requires --task")
    conf = _load_config(config_path, TRAIN_KEYS + MODEL_KEYS)
    if seed is not None:
        conf["seed"] = seed
    try:
        frames, labels = read_feature_cache(features, layer)
    except (CacheError, ValueError) as exc:
        _fail_usage(str(exc))
    task_idx = None if mode == "mt" else CONDITIONS.index(task)
    tcfg = TrainConfig(**{k: v for k, v in conf.items() if k in TRAIN_KEYS}, task=task_idx)
    try:
        tcfg.validate()
    except TrainError as exc:
        _fail_usage(str(exc))
    x = stack_frames(frames)
    mcfg = ModelConfig(
        n_channels=x.shape[2], t_days=x.shape[1], n_tasks=9 if task_idx is None else 1,
        **{k: v for k, v in conf.items() if k in MODEL_KEYS},
    )
    try:
        mcfg.validate()
    except ValueError as exc:
        _fail_usage(str(exc))
    perm = np.random.default_rng([tcfg.seed, 99]).permutation(len(frames))
    n_val = len(frames) // 4
    tr, va = np.sort(perm[n_val:]), np.sort(perm[:n_val])
    stats = fit_norm(x[tr], frames[0].feature_names)
    xn = apply_norm(x, stats)
    params, hist = train_model(xn[tr], labels[tr], xn[va], labels[va], mcfg, tcfg)
    run = write_run(
        out, mcfg, tcfg, params, hist,
        extra={
            "features": str(features),
            "layer": Layer(layer).value,
            "mode": mode,
            "task_name": task,
            "train_users": [frames[i].user_id for i in tr],
            "val_users": [frames[i].user_id for i in va],
        },
    )
    _write_json(run / "norm.json", {"mean": stats.mean.tolist(), "std": stats.std.tolist(), "features": list(stats.feature_names)})
    best = hist.val_mean_auc[hist.best_epoch] if hist.best_epoch >= 0 else float("nan")
    click.echo(f"best epoch {hist.best_epoch} of {hist.epochs}, validation mean AUC {best:.4f}; run written to {run}")


@main.command()
@click.option("--data", type=click.Path(), required=True, help="Cohort directory.")
@click.option("--classifiers", default=",".join(CLASSIFIERS), show_default=True, help="Comma-separated classifier names.")
@click.option("--layers", default="minute_sleep", show_default=True, help="Comma-separated layers, or 'all'.")
@click.option("--folds", type=int, default=4, show_default=True, help="Number of random 50/25/25 splits.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for folds and all training.")
@click.option("--config", "config_path", type=click.Path(), help="JSON file with train/model/baseline settings.")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Report directory.")
@click.option("--workers", type=int, default=os.cpu_count() or 1, show_default=True, help="Folds evaluated in parallel.")
def evaluate(data, classifiers, layers, folds, seed, config_path, out, workers) -> None:
    """Cross-validated classifier and data-layer comparison."""
    names = [c.strip() for c in classifiers.split(",") if c.strip()]
    bad = [c for c in names if c not in CLASSIFIERS]
    if bad or not names:
        _fail_usage(f"unknown classifier(s) {bad}; valid: {', '.join(CLASSIFIERS)}")
    lays = _parse_layers(layers)
    conf = _load_config(config_path, TRAIN_KEYS + MODEL_KEYS + EXPERIMENT_KEYS)
    cohort = _load_eligible(data)
    top = max(lays, key=LAYERS.index)
    frames = assemble_frames(cohort, top)
    labels = cohort.subset([f.user_id for f in frames]).labels()
    try:
        plan = make_folds([f.user_id for f in frames], k=folds, seed=seed)
    except FoldError as exc:
        _fail_usage(str(exc))
    exp = ExperimentConfig(
        train=TrainConfig(**{k: v for k, v in conf.items() if k in TRAIN_KEYS}),
        model={k: v for k, v in conf.items() if k in MODEL_KEYS},
        seed=seed,
        **{k: v for k, v in conf.items() if k in EXPERIMENT_KEYS},
    )
    try:
        exp.train.validate()
        ModelConfig(n_channels=top.dims, t_days=cohort.t_days, **exp.model).validate()
    except ValueError as exc:
        _fail_usage(str(exc))
    report = run_experiment(frames, labels, names, lays, plan, exp, workers=workers)
    paths = write_report(report, out)
    for row in report.summary_rows():
        click.echo(f"{row['classifier']:8s} {row['layer']:13s} mean AUC {row['all_mean']:.3f} (SE {row['all_se']:.3f})")
    click.echo("wrote " + ", ".join(str(p) for p in paths))


if __name__ == "__main__":
    main()
