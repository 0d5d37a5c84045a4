"""Finite-difference verification of the model's backward pass."""

from __future__ import annotations

import math

import numpy as np

from .layers import sigmoid
from .model import PARAM_NAMES, ModelConfig, ModelParams, backward, forward, init_params


def _bce_terms(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    # log(1 + e^z) - y z, computed stably
    return np.logaddexp(0.0, logits) - y * logits


def _mean_bce(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(_bce_terms(logits, y)))


def tiny_config(rng: np.random.Generator, n_tasks: int | None = None) -> ModelConfig:
    """A random architecture small enough for exhaustive finite differences.

    The full-size conv stack needs T >= 33, so tiny configs shrink kernels
    and strides as well as D, T and the hidden width.
    """
    while True:
        cfg = ModelConfig(
            n_channels=int(rng.integers(1, 6)),
            t_days=int(rng.integers(12, 31)),
            conv1_filters=int(rng.integers(2, 5)),
            conv1_width=int(rng.integers(2, 6)),
            conv1_stride=int(rng.integers(1, 3)),
            conv2_filters=int(rng.integers(1, 4)),
            conv2_width=int(rng.integers(2, 4)),
            conv2_stride=int(rng.integers(1, 3)),
            pool_width=2,
            pool_stride=2,
            dropout_p=0.5,
            hidden=int(rng.integers(3, 11)),
            n_tasks=int(n_tasks if n_tasks is not None else rng.choice([1, 2, 9])),
            share_extractors=bool(rng.random() < 0.3),
        )
        if min(cfg.lengths()) >= 1:
            return cfg


def grad_check(
    cfg: ModelConfig,
    seed: int = 0,
    eps: float = 1e-5,
    batch: int = 3,
    backward_fn=backward,
) -> float:
    """Max relative error between backprop and central differences.

    Dropout stays on with masks frozen by re-seeding the mask generator for
    every evaluation. Relative error is |a - n| / max(|a|, |n|, 1e-8).

    The two loss evaluations are differenced term by term before summing, so
    terms the perturbation does not touch cancel exactly instead of leaving
    summation roundoff behind; this matters for gradients near 1e-8.
    """
    rng = np.random.default_rng([seed, 11])
    params = init_params(cfg, rng)
    # nonzero biases so every parameter group is exercised away from symmetry
    params = params.map(lambda a: a + rng.normal(0.0, 0.1, a.shape))
    x = rng.normal(0.0, 1.0, (batch, cfg.n_channels, cfg.t_days))
    y = (rng.random((batch, cfg.n_tasks)) < 0.5).astype(float)
    mask_seed = [seed, 12]

    def loss_terms(p: ModelParams) -> np.ndarray:
        _, tape = forward(p, cfg, x, train=True, rng=np.random.default_rng(mask_seed))
        return _bce_terms(tape.logits, y)

    _, tape = forward(params, cfg, x, train=True, rng=np.random.default_rng(mask_seed))
    grad_logits = (sigmoid(tape.logits) - y) / y.size
    analytic = backward_fn(params, cfg, tape, grad_logits)

    worst = 0.0
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        g_a = getattr(analytic, name)
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + eps
            up = loss_terms(params)
            arr[i] = orig - eps
            down = loss_terms(params)
            arr[i] = orig
            g_n = math.fsum((up - down).ravel()) / y.size / (2 * eps)
            err = abs(g_a[i] - g_n) / max(abs(g_a[i]), abs(g_n), 1e-8)
            worst = max(worst, err)
    return worst
