"""Layer primitives with explicit backward passes.

Every function accepts arbitrary leading batch dimensions. Weight arrays may
carry their own leading dimensions (for example one filter bank per input
channel) which broadcast against the input's; backward functions reduce
gradients back to the parameter's shape.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def out_length(length: int, width: int, stride: int) -> int:
    return (length - width) // stride + 1


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------


def _windows(x: np.ndarray, width: int, stride: int) -> np.ndarray:
    """(..., C, L) -> (..., C, L', width) strided view."""
    return sliding_window_view(x, width, axis=-1)[..., ::stride, :]


def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation.

    x: (..., C_in, L), w: (..., C_out, C_in, W), b: (..., C_out)
    returns (..., C_out, (L - W) // stride + 1)
    """
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    c_in, length = x.shape[-2:]
    _, w_cin, width = w.shape[-3:]
    if w_cin != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels, weights expect {w_cin}")
    if b.shape[-1] != w.shape[-3]:
        raise ShapeError(f"conv1d: bias has {b.shape[-1]} entries, expected {w.shape[-3]}")
    if length < width:
        raise ShapeError(f"conv1d: input length {length} < kernel width {width}")
    win = _windows(x, width, stride)
    return np.einsum("...clw,...fcw->...fl", win, w, optimize=True) + b[..., None]


def conv1d_backward(
    grad_out: np.ndarray, x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1,
    need_input: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients (d_input, d_weights, d_bias) of a conv1d output."""
    width = w.shape[-1]
    win = _windows(x, width, stride)
    l_out = grad_out.shape[-1]
    gw = np.einsum("...fl,...clw->...fcw", grad_out, win, optimize=True)
    gb = grad_out.sum(axis=-1)
    gx = None
    if need_input:
        gx = np.zeros(grad_out.shape[:-2] + x.shape[-2:], dtype=grad_out.dtype)
        span = stride * (l_out - 1) + 1
        for j in range(width):
            gx[..., j : j + span : stride] += np.einsum(
                "...fl,...fc->...cl", grad_out, w[..., j], optimize=True
            )
        gx = sum_to_shape(gx, x.shape)
    return gx, sum_to_shape(gw, w.shape), sum_to_shape(gb, b.shape)


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------


def maxpool(x: np.ndarray, width: int = 2, stride: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Max over windows of the last axis; returns (output, argmax offsets).

    The offset is the position inside each window; ties go to the lowest.
    """
    if x.shape[-1] < width:
        raise ShapeError(f"maxpool: input length {x.shape[-1]} < pool width {width}")
    win = _windows(x, width, stride)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(
    grad_out: np.ndarray, idx: np.ndarray, in_length: int, width: int = 2, stride: int = 2
) -> np.ndarray:
    g = np.zeros(grad_out.shape[:-1] + (in_length,), dtype=grad_out.dtype)
    span = stride * (grad_out.shape[-1] - 1) + 1
    for k in range(width):
        g[..., k : k + span : stride] += np.where(idx == k, grad_out, 0.0)
    return g


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability p, else 1 / (1 - p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    # uint16 draws: drop probability is p rounded to a multiple of 2^-16
    # (exact for 0.5), with the survivor scale matched to the realized rate
    k = int(round(p * 65536))
    keep = rng.integers(0, 65536, shape, dtype=np.uint16) >= k
    return keep * (65536 / (65536 - k))


def dropout(
    x: np.ndarray, p: float, rng: np.random.Generator | None, train: bool
) -> tuple[np.ndarray, np.ndarray | None]:
    """Returns (output, mask); the mask is None in eval mode."""
    if not train or p == 0.0:
        return x, None
    mask = dropout_mask(x.shape, p, rng)
    return x * mask, mask


# ---------------------------------------------------------------------------
# dense + activations
# ---------------------------------------------------------------------------


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


ACTIVATIONS = {
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (relu, lambda z, a: (z > 0).astype(z.dtype)),
    "sigmoid": (sigmoid, lambda z, a: a * (1.0 - a)),
}


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray, activation: str = "linear"):
    """Affine map x @ w.T + b followed by an activation. Returns (a, z)."""
    if x.shape[-1] != w.shape[-1]:
        raise ShapeError(f"dense: input has {x.shape[-1]} features, weights expect {w.shape[-1]}")
    if b.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: bias has {b.shape[-1]} entries, expected {w.shape[0]}")
    z = x @ w.T + b
    return ACTIVATIONS[activation][0](z), z


def activation_backward(grad_a: np.ndarray, z: np.ndarray, a: np.ndarray, activation: str):
    return grad_a * ACTIVATIONS[activation][1](z, a)


def dense_backward(grad_z: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Gradients (d_input, d_weights, d_bias) given d_loss/d_z."""
    gx = grad_z @ w
    g2 = grad_z.reshape(-1, grad_z.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return gx, g2.T @ x2, g2.sum(axis=0)


# ---------------------------------------------------------------------------
# per-channel filter banks, channels-last layout
# ---------------------------------------------------------------------------
#
# The CNN runs one univariate extractor per input channel. Activations are
# held as (K, B, L, C): bank, example, time, feature map, so each bank's
# convolution is a single (B * L', C_in * W) @ (C_in * W, C_out) matmul.


def bank_conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """x: (D, B, L, C_in), w: (K, C_out, C_in, W) with K in {D, 1}, b: (K, C_out).

    Returns (output (D, B, L', C_out), im2col matrix (D, B * L', C_in * W)).
    """
    d, batch, length, c_in = x.shape
    k, c_out, w_cin, width = w.shape
    if w_cin != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels, weights expect {w_cin}")
    if length < width:
        raise ShapeError(f"conv1d: input length {length} < kernel width {width}")
    win = sliding_window_view(x, width, axis=2)[:, :, ::stride]  # (D, B, L', C_in, W)
    l_out = win.shape[2]
    cols = win.reshape(d, batch * l_out, c_in * width)
    w_mat = w.reshape(k, c_out, c_in * width).transpose(0, 2, 1)
    out = cols @ w_mat + b[:, None, :]
    return out.reshape(d, batch, l_out, c_out), cols


def bank_conv1d_backward(
    grad_out: np.ndarray, cols: np.ndarray, x_shape: tuple[int, ...], w: np.ndarray, stride: int,
    need_input: bool = True,
):
    """Gradients (d_input, d_weights, d_bias) for :func:`bank_conv1d`."""
    d, batch, l_out, c_out = grad_out.shape
    k, _, c_in, width = w.shape
    g = grad_out.reshape(d, batch * l_out, c_out)
    gw = (cols.transpose(0, 2, 1) @ g)  # (D, C_in*W, C_out)
    gb = g.sum(axis=1)
    if k == 1:
        gw = gw.sum(axis=0, keepdims=True)
        gb = gb.sum(axis=0, keepdims=True)
    gw = gw.transpose(0, 2, 1).reshape(k, c_out, c_in, width)
    gx = None
    if need_input:
        w_mat = w.reshape(k, c_out, c_in * width)
        gcols = (g @ w_mat).reshape(d, batch, l_out, c_in, width)
        gx = np.zeros(x_shape, dtype=grad_out.dtype)
        span = stride * (l_out - 1) + 1
        for j in range(width):
            gx[:, :, j : j + span : stride, :] += gcols[..., j]
    return gx, gw, gb


def bank_maxpool(x: np.ndarray, width: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Max-pool over the time axis of a (D, B, L, C) array."""
    if x.shape[2] < width:
        raise ShapeError(f"maxpool: input length {x.shape[2]} < pool width {width}")
    if width == stride == 2:
        # non-overlapping pairs: compare even and odd positions directly
        l_out = x.shape[2] // 2
        even, odd = x[:, :, 0 : 2 * l_out : 2], x[:, :, 1 : 2 * l_out : 2]
        idx = (odd > even).astype(np.intp)
        return np.maximum(even, odd), idx
    win = sliding_window_view(x, width, axis=2)[:, :, ::stride]  # (D, B, L', C, width)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def bank_maxpool_backward(
    grad_out: np.ndarray, idx: np.ndarray, in_length: int, width: int, stride: int
) -> np.ndarray:
    d, batch, l_out, c = grad_out.shape
    g = np.zeros((d, batch, in_length, c), dtype=grad_out.dtype)
    if width == stride == 2:
        second = idx.astype(bool)
        g[:, :, 0 : 2 * l_out : 2] = np.where(second, 0.0, grad_out)
        g[:, :, 1 : 2 * l_out : 2] = np.where(second, grad_out, 0.0)
        return g
    span = stride * (l_out - 1) + 1
    for k in range(width):
        g[:, :, k : k + span : stride, :] += np.where(idx == k, grad_out, 0.0)
    return g
