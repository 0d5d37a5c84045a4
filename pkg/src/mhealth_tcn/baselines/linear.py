"""L2-penalized logistic regression fitted by full-batch momentum descent."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autonet.layers import sigmoid
from ..eval.metrics import auc

L2_GRID = (0.001, 0.01, 0.1, 1.0, 10.0)


class BaselineError(ValueError):
    pass


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    l2: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.isfinite(self.weights).all() or not np.isfinite(self.bias):
            raise BaselineError("non-finite logistic regression weights")

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": float(self.bias), "l2": float(self.l2)}

    @classmethod
    def from_dict(cls, d: dict) -> LinearModel:
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]), float(d["l2"]))


@dataclass
class LRConfig:
    momentum: float = 0.9
    tol: float = 1e-6
    max_iter: int = 1000


def _check_labels(y: np.ndarray) -> None:
    for c in range(y.shape[1]):
        if y[:, c].min() == y[:, c].max():
            raise BaselineError(f"label column {c} has a single class")


def _step_size(x: np.ndarray) -> float:
    """1 / Lipschitz bound of the mean-BCE gradient, via power iteration."""
    n, d = x.shape
    v = np.ones(d) / np.sqrt(d)
    lam = 0.0
    for _ in range(50):
        w = x.T @ (x @ v)
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0.0:
            break
        v = w / lam_new
        if abs(lam_new - lam) <= 1e-6 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    # +1 bounds the bias direction; 1.1 covers power-iteration underestimate
    return 1.0 / (1.1 * (lam / n + 1.0) / 4.0)


def loss_and_grad(x, y, w, b, l2):
    """Mean BCE + (l2/2)|w|^2 per column, and its gradients."""
    z = x @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z, axis=0) + 0.5 * l2 * np.sum(w * w, axis=0)
    r = (sigmoid(z) - y) / len(x)
    return loss, x.T @ r + l2 * w, r.sum(axis=0)


def fit_logistic(
    x: np.ndarray,
    y: np.ndarray,
    l2: float,
    config: LRConfig | None = None,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Fit one model per label column at once.

    x: (n, d), y: (n, k). Returns (W (d, k), b (k,), iterations). Stops when
    every column's gradient norm is below ``tol`` or at ``max_iter``.
    """
    cfg = config or LRConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if len(x) < 2:
        raise BaselineError("logistic regression needs at least 2 examples")
    _check_labels(y)
    d, k = x.shape[1], y.shape[1]
    if init is None:
        w, b = np.zeros((d, k)), np.zeros(k)
    else:
        w, b = np.array(init[0], dtype=np.float64).reshape(d, k), np.array(init[1], dtype=np.float64).reshape(k)
    lr = 1.0 / (1.0 / _step_size(x) + l2)
    vw, vb = np.zeros_like(w), np.zeros_like(b)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        _, gw, gb = loss_and_grad(x, y, w, b, l2)
        gnorm = np.sqrt((gw * gw).sum(axis=0) + gb * gb)
        if (gnorm < cfg.tol).all():
            break
        # same update rule as the network optimizer: v <- m v - lr g; w <- w + v
        vw = cfg.momentum * vw - lr * gw
        vb = cfg.momentum * vb - lr * gb
        w = w + vw
        b = b + vb
    return w, b, it


def lr_train(inputs, labels, l2: float, config: LRConfig | None = None, init=None) -> LinearModel:
    w, b, _ = fit_logistic(inputs, np.asarray(labels).reshape(-1, 1), l2, config, init)
    return LinearModel(w[:, 0], float(b[0]), l2)


def lr_predict(model: LinearModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    return sigmoid(x @ model.weights + model.bias)


def lr_select(
    x_train, y_train, x_val, y_val, grid=L2_GRID, config: LRConfig | None = None
) -> list[LinearModel]:
    """Per label column, the grid value with the best validation AUC.

    The grid is walked from the strongest penalty down, warm-starting each
    fit from the previous solution. Columns whose validation labels have
    one class keep the strongest penalty.
    """
    y_train = np.asarray(y_train).reshape(len(x_train), -1)
    y_val = np.asarray(y_val).reshape(len(x_val), -1)
    k = y_train.shape[1]
    best: list[LinearModel | None] = [None] * k
    best_auc = np.full(k, -np.inf)
    init = None
    for l2 in sorted(grid, reverse=True):
        w, b, _ = fit_logistic(x_train, y_train, l2, config, init)
        init = (w, b)
        scores = sigmoid(np.asarray(x_val, dtype=np.float64) @ w + b)
        for c in range(k):
            col = y_val[:, c]
            a = auc(scores[:, c], col) if col.min() != col.max() else -1.0
            if best[c] is None or a > best_auc[c]:
                best[c], best_auc[c] = LinearModel(w[:, c].copy(), float(b[c]), l2), a
    return best


def save_linear(path: str | Path, model: LinearModel) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")


def load_linear(path: str | Path) -> LinearModel:
    return LinearModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
