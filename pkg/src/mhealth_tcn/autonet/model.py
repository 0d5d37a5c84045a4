"""Temporal CNN: per-channel two-stage univariate extractors + MLP head.

For every input channel (one per-day feature sequence):

    conv1 -> tanh -> dropout -> maxpool -> conv2 -> tanh -> dropout -> maxpool

The pooled maps of all channels are flattened and fed to a dense ReLU
layer, dropout, and one sigmoid output per task.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import fused
from . import layers as L


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int
    t_days: int
    conv1_filters: int = 8
    conv1_width: int = 7
    conv1_stride: int = 2
    conv2_filters: int = 4
    conv2_width: int = 5
    conv2_stride: int = 2
    pool_width: int = 2
    pool_stride: int = 2
    dropout_p: float = 0.5
    hidden: int = 300
    n_tasks: int = 9
    share_extractors: bool = False

    def lengths(self) -> tuple[int, int, int, int]:
        """Sequence length after conv1, pool1, conv2, pool2."""
        l1 = L.out_length(self.t_days, self.conv1_width, self.conv1_stride)
        p1 = L.out_length(l1, self.pool_width, self.pool_stride)
        l2 = L.out_length(p1, self.conv2_width, self.conv2_stride)
        p2 = L.out_length(l2, self.pool_width, self.pool_stride)
        return l1, p1, l2, p2

    @property
    def flatten_size(self) -> int:
        return self.n_channels * self.conv2_filters * self.lengths()[3]

    @property
    def bank_count(self) -> int:
        return 1 if self.share_extractors else self.n_channels

    def validate(self) -> None:
        if min(self.n_channels, self.t_days, self.hidden, self.n_tasks) < 1:
            raise ConfigError("n_channels, t_days, hidden and n_tasks must be positive")
        if min(self.conv1_stride, self.conv2_stride, self.pool_stride) < 1:
            raise ConfigError("strides must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        lengths = self.lengths()
        if min(lengths) < 1:
            raise ConfigError(
                f"t_days={self.t_days} too short for this architecture (stage lengths {lengths})"
            )

    def to_dict(self) -> dict:
        return asdict(self)


PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b", "head_w", "head_b")


@dataclass
class ModelParams:
    conv1_w: np.ndarray  # (K, F1, 1, W1)
    conv1_b: np.ndarray  # (K, F1)
    conv2_w: np.ndarray  # (K, F2, F1, W2)
    conv2_b: np.ndarray  # (K, F2)
    dense_w: np.ndarray  # (H, flatten)
    dense_b: np.ndarray  # (H,)
    head_w: np.ndarray  # (C, H), row c is task c's output weights
    head_b: np.ndarray  # (C,)

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> ModelParams:
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> ModelParams:
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    def map(self, fn, *others: ModelParams) -> ModelParams:
        return ModelParams(
            *(fn(*arrs) for arrs in zip(self.arrays(), *(o.arrays() for o in others)))
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    k = cfg.bank_count
    return {
        "conv1_w": (k, cfg.conv1_filters, 1, cfg.conv1_width),
        "conv1_b": (k, cfg.conv1_filters),
        "conv2_w": (k, cfg.conv2_filters, cfg.conv1_filters, cfg.conv2_width),
        "conv2_b": (k, cfg.conv2_filters),
        "dense_w": (cfg.hidden, cfg.flatten_size),
        "dense_b": (cfg.hidden,),
        "head_w": (cfg.n_tasks, cfg.hidden),
        "head_b": (cfg.n_tasks,),
    }


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    cfg.validate()
    shapes = param_shapes(cfg)

    def glorot(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, shape)

    w1, w2 = cfg.conv1_width, cfg.conv2_width
    return ModelParams(
        conv1_w=glorot(shapes["conv1_w"], w1, cfg.conv1_filters * w1),
        conv1_b=np.zeros(shapes["conv1_b"]),
        conv2_w=glorot(shapes["conv2_w"], cfg.conv1_filters * w2, cfg.conv2_filters * w2),
        conv2_b=np.zeros(shapes["conv2_b"]),
        dense_w=glorot(shapes["dense_w"], cfg.flatten_size, cfg.hidden),
        dense_b=np.zeros(shapes["dense_b"]),
        head_w=glorot(shapes["head_w"], cfg.hidden, cfg.n_tasks),
        head_b=np.zeros(shapes["head_b"]),
    )


def check_params(params: ModelParams, cfg: ModelConfig) -> None:
    for name, shape in param_shapes(cfg).items():
        actual = getattr(params, name).shape
        if actual != shape:
            raise L.ShapeError(f"{name}: expected shape {shape}, got {actual}")


@dataclass
class ForwardTape:
    """Intermediates of one forward pass, in (D, B, L, maps) layout."""

    train: bool
    x_shape: tuple[int, ...]
    cols1: np.ndarray
    idx1: np.ndarray
    deriv1: np.ndarray  # d(dropout(tanh(z1)))/dz1, zero where dropped
    p1_shape: tuple[int, ...]
    cols2: np.ndarray
    idx2: np.ndarray
    deriv2: np.ndarray
    flat: np.ndarray
    zh: np.ndarray
    m3: np.ndarray | None
    hd: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _stage_forward(z: np.ndarray, cfg: ModelConfig, rng, train: bool):
    """tanh -> dropout -> maxpool; returns (pooled, argmax, local derivative)."""
    if cfg.pool_width == cfg.pool_stride == 2:
        return fused.stage_forward(z, cfg.dropout_p, rng, train)
    a = np.tanh(z)
    d, mask = L.dropout(a, cfg.dropout_p, rng, train)
    pooled, idx = L.bank_maxpool(d, cfg.pool_width, cfg.pool_stride)
    deriv = 1.0 - a * a
    if mask is not None:
        deriv *= mask
    return pooled, idx, deriv


def _stage_backward(g_pooled: np.ndarray, idx: np.ndarray, deriv: np.ndarray, cfg: ModelConfig):
    if cfg.pool_width == cfg.pool_stride == 2:
        return fused.stage_backward(g_pooled, idx, deriv)
    g = L.bank_maxpool_backward(g_pooled, idx, deriv.shape[2], cfg.pool_width, cfg.pool_stride)
    return g * deriv


def forward(
    params: ModelParams,
    cfg: ModelConfig,
    x: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTape]:
    """Task probabilities for input (D, T) or a batch (B, D, T).

    Returns probabilities of shape (n_tasks,) or (B, n_tasks) and the tape
    needed by :func:`backward`. Eval mode (``train=False``) is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != (cfg.n_channels, cfg.t_days):
        raise L.ShapeError(
            f"input has shape {x.shape[1:]}, model expects {(cfg.n_channels, cfg.t_days)}"
        )
    if not np.isfinite(x).all():
        raise ValueError("non-finite model input")
    if train and cfg.dropout_p > 0 and rng is None:
        raise ValueError("train-mode forward needs an rng for dropout")
    p = cfg.dropout_p
    batch = len(x)
    xb = x.transpose(1, 0, 2)[..., None]  # (D, B, T, 1)

    z1, cols1 = L.bank_conv1d(xb, params.conv1_w, params.conv1_b, cfg.conv1_stride)
    p1, idx1, deriv1 = _stage_forward(z1, cfg, rng, train)
    z2, cols2 = L.bank_conv1d(p1, params.conv2_w, params.conv2_b, cfg.conv2_stride)
    p2, idx2, deriv2 = _stage_forward(z2, cfg, rng, train)

    # flatten in (channel, map, time) order
    flat = p2.transpose(1, 0, 3, 2).reshape(batch, -1)
    h, zh = L.dense(flat, params.dense_w, params.dense_b, "relu")
    hd, m3 = L.dropout(h, p, rng, train)
    logits = hd @ params.head_w.T + params.head_b
    probs = L.sigmoid(logits)
    tape = ForwardTape(
        train, xb.shape, cols1, idx1, deriv1, p1.shape, cols2, idx2, deriv2,
        flat, zh, m3, hd, logits, probs,
    )
    return (probs[0] if single else probs), tape


def backward(
    params: ModelParams, cfg: ModelConfig, tape: ForwardTape, grad_logits: np.ndarray
) -> ModelParams:
    """Parameter gradients given d_loss/d_logits, shape (n_tasks,) or (B, n_tasks)."""
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.ndim == 1:
        g = g[None]
    if g.shape != tape.logits.shape:
        raise L.ShapeError(f"grad_logits shape {g.shape} != logits shape {tape.logits.shape}")
    batch = g.shape[0]

    g_head_w = g.T @ tape.hd
    g_head_b = g.sum(axis=0)
    g_h = g @ params.head_w
    if tape.m3 is not None:
        g_h = g_h * tape.m3
    g_zh = g_h * (tape.zh > 0)
    g_flat, g_dense_w, g_dense_b = L.dense_backward(g_zh, tape.flat, params.dense_w)

    p2_len = cfg.lengths()[3]
    g_p2 = g_flat.reshape(batch, cfg.n_channels, cfg.conv2_filters, p2_len).transpose(1, 0, 3, 2)
    g_z2 = _stage_backward(g_p2, tape.idx2, tape.deriv2, cfg)
    g_p1, g_conv2_w, g_conv2_b = L.bank_conv1d_backward(
        g_z2, tape.cols2, tape.p1_shape, params.conv2_w, cfg.conv2_stride
    )

    g_z1 = _stage_backward(g_p1, tape.idx1, tape.deriv1, cfg)
    _, g_conv1_w, g_conv1_b = L.bank_conv1d_backward(
        g_z1, tape.cols1, tape.x_shape, params.conv1_w, cfg.conv1_stride, need_input=False
    )
    return ModelParams(
        g_conv1_w, g_conv1_b, g_conv2_w, g_conv2_b, g_dense_w, g_dense_b, g_head_w, g_head_b
    )


def predict(params: ModelParams, cfg: ModelConfig, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities for a (B, D, T) batch, (B, n_tasks)."""
    x = np.asarray(x, dtype=np.float64)
    out = [forward(params, cfg, x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, cfg.n_tasks))


def config_from_dict(d: dict) -> ModelConfig:
    names = {f.name for f in fields(ModelConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    return ModelConfig(**d)
