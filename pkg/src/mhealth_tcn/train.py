"""Losses, SGD with momentum, and the mini-batch training loop."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autonet.checkpoint import save_checkpoint
from .autonet.model import ModelConfig, ModelParams, backward, forward, init_params, predict
from .cohort.types import CONDITIONS
from .eval.metrics import mean_task_auc

log = logging.getLogger(__name__)


class TrainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def bce_loss(y, p) -> np.ndarray:
    """Elementwise -(y log p + (1 - y) log(1 - p))."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_with_logits(logits, y) -> tuple[np.ndarray, np.ndarray]:
    """Fused sigmoid + BCE: (elementwise loss, d loss / d logit = p - y)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = np.logaddexp(0.0, z) - y * z
    p = np.exp(-np.logaddexp(0.0, -z))
    return loss, p - y


def multitask_loss(y, p) -> float:
    """Mean of the per-task BCE losses (last axis), averaged over any batch axis."""
    y = np.asarray(y)
    p = np.asarray(p)
    if y.shape != p.shape:
        raise TrainError(f"label shape {y.shape} != probability shape {p.shape}")
    return float(np.mean(bce_loss(y, p)))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    task: int | None = None  # None = multi-task, else the single task index
    l2: float = 0.0

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise TrainError("learning_rate must be > 0")
        if self.patience < 1:
            raise TrainError("patience must be >= 1")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise TrainError("max_epochs must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise TrainError("momentum must be in [0, 1)")
        if self.l2 < 0:
            raise TrainError("l2 must be >= 0")
        if self.task is not None and not 0 <= self.task < len(CONDITIONS):
            raise TrainError(f"task index {self.task} out of range")

    @property
    def mode(self) -> str:
        return "mt" if self.task is None else "st"

    def to_dict(self) -> dict:
        return asdict(self)


def sgd_step(
    params: ModelParams, grads: ModelParams, velocity: ModelParams, cfg: TrainConfig
) -> tuple[ModelParams, ModelParams]:
    """v <- momentum v - lr (g + l2 w); w <- w + v."""
    if not grads.all_finite():
        raise TrainError("non-finite gradient")
    lr, mom, l2 = cfg.learning_rate, cfg.momentum, cfg.l2
    new_v = velocity.map(lambda v, g, w: mom * v - lr * (g + l2 * w), grads, params)
    new_p = params.map(lambda w, v: w + v, new_v)
    return new_p, new_v


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_mean_auc: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def rows(self) -> list[tuple[int, float, float, float]]:
        return list(zip(range(self.epochs), self.train_loss, self.val_loss, self.val_mean_auc))


def _to_model_layout(x: np.ndarray) -> np.ndarray:
    # frames are stacked (n, T, D); the model wants (n, D, T)
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).transpose(0, 2, 1))


def _select_labels(y: np.ndarray, task: int | None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if task is None:
        return y
    return y[:, task : task + 1]


def train_model(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray | None,
    y_val: np.ndarray | None,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> tuple[ModelParams, TrainHistory]:
    """Train on normalized (n, T, D) inputs and (n, 9) labels.

    Without a validation set no early stopping happens and the last epoch
    is returned. Validation tasks with one class are left out of the
    stopping criterion; if none remain, validation loss decides instead.
    """
    train_cfg.validate()
    model_cfg.validate()
    xt = _to_model_layout(x_train)
    yt = _select_labels(y_train, train_cfg.task)
    if len(xt) == 0:
        raise TrainError("empty training set")
    if yt.shape != (len(xt), model_cfg.n_tasks):
        raise TrainError(
            f"labels give {yt.shape[1]} task(s) for {len(xt)} users; model has {model_cfg.n_tasks} head(s)"
        )
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        xv = _to_model_layout(x_val)
        yv = _select_labels(y_val, train_cfg.task)
        single = [c for c in range(yv.shape[1]) if yv[:, c].min() == yv[:, c].max()]
        if single:
            log.warning("validation tasks %s have one class; excluded from early stopping", single)

    seed = train_cfg.seed
    params = init_params(model_cfg, np.random.default_rng([seed, 0]))
    velocity = params.zeros_like()
    shuffle_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2])

    hist = TrainHistory()
    best_params = params.copy()
    best_score = -np.inf
    since_best = 0
    n = len(xt)
    bs = train_cfg.batch_size
    for epoch in range(train_cfg.max_epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            _, tape = forward(params, model_cfg, xt[idx], train=True, rng=dropout_rng)
            loss, g = bce_with_logits(tape.logits, yt[idx])
            total += float(loss.mean(axis=1).sum())
            grads = backward(params, model_cfg, tape, g / g.size)
            params, velocity = sgd_step(params, grads, velocity, train_cfg)
        hist.train_loss.append(total / n)

        if has_val:
            pv = predict(params, model_cfg, xv)
            hist.val_loss.append(multitask_loss(yv, np.clip(pv, 1e-15, 1 - 1e-15)))
            mean_auc, _ = mean_task_auc(pv, yv)
            hist.val_mean_auc.append(mean_auc)
            score = -hist.val_loss[-1] if np.isnan(mean_auc) else mean_auc
        else:
            hist.val_loss.append(float("nan"))
            hist.val_mean_auc.append(float("nan"))
            score = float(epoch)
        hist.seconds.append(time.perf_counter() - t0)

        if score > best_score:
            best_score = score
            best_params = params.copy()
            hist.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if has_val and since_best >= train_cfg.patience:
                break
    return best_params, hist


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------


def write_run(
    out_dir: str | Path,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    params: ModelParams,
    hist: TrainHistory,
    extra: dict | None = None,
) -> Path:
    """history.csv, best.ckpt and config.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_mean_auc"])
        for epoch, tl, vl, va in hist.rows():
            w.writerow([epoch, repr(tl), repr(vl), repr(va)])
    save_checkpoint(out / "best.ckpt", model_cfg, params)
    config = {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "best_epoch": hist.best_epoch,
        "epochs_run": hist.epochs,
    }
    if extra:
        config.update(extra)
    with open(out / "config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
