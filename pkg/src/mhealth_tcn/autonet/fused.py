"""Fused tanh -> dropout -> 2/2 max-pool stage for the bank layout.

The three elementwise passes dominate training time at full size, so they
run as one compiled loop. The stage stores the local derivative
d(pooled input)/d(z) = keep * scale * (1 - tanh(z)^2) for the backward pass.
"""

from __future__ import annotations

import numba
import numpy as np

UNITS = 65536  # dropout draws are uint16; keep when draw >= threshold


def dropout_threshold(p: float) -> tuple[int, float]:
    """(uint16 threshold, survivor scale) for drop probability p."""
    k = int(round(p * UNITS))
    if not 0 <= k < UNITS:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    return k, UNITS / (UNITS - k)


@numba.njit(cache=True)
def _stage_forward(a, draws, threshold, scale, use_mask, pooled, idx, deriv):
    d_, b_, l_, c_ = a.shape
    lp = pooled.shape[2]
    for d in range(d_):
        for b in range(b_):
            for t in range(l_):
                for c in range(c_):
                    v = a[d, b, t, c]
                    if use_mask and draws[d, b, t, c] < threshold:
                        deriv[d, b, t, c] = 0.0
                        a[d, b, t, c] = 0.0  # overwritten in place with the dropout output
                    else:
                        deriv[d, b, t, c] = scale * (1.0 - v * v)
                        a[d, b, t, c] = scale * v
            for j in range(lp):
                for c in range(c_):
                    e = a[d, b, 2 * j, c]
                    o = a[d, b, 2 * j + 1, c]
                    if o > e:
                        pooled[d, b, j, c] = o
                        idx[d, b, j, c] = 1
                    else:
                        pooled[d, b, j, c] = e
                        idx[d, b, j, c] = 0


@numba.njit(cache=True)
def _stage_backward(g_pooled, idx, deriv, g_z):
    d_, b_, lp, c_ = g_pooled.shape
    g_z[:] = 0.0
    for d in range(d_):
        for b in range(b_):
            for j in range(lp):
                for c in range(c_):
                    t = 2 * j + idx[d, b, j, c]
                    g_z[d, b, t, c] = g_pooled[d, b, j, c] * deriv[d, b, t, c]


def stage_forward(z: np.ndarray, p: float, rng: np.random.Generator | None, train: bool):
    """tanh, dropout (train only), max-pool width 2 stride 2 over axis 2.

    Returns (pooled, argmax offsets, local derivative).
    """
    # numpy's vectorized tanh beats a scalar tanh inside the compiled loop
    z = np.tanh(np.ascontiguousarray(z, dtype=np.float64))
    d, b, length, c = z.shape
    lp = length // 2
    use_mask = train and p > 0.0
    if use_mask:
        threshold, scale = dropout_threshold(p)
        draws = rng.integers(0, UNITS, z.shape, dtype=np.uint16)
    else:
        threshold, scale = 0, 1.0
        draws = np.zeros((1, 1, 1, 1), dtype=np.uint16)
    pooled = np.empty((d, b, lp, c))
    idx = np.empty((d, b, lp, c), dtype=np.int8)
    deriv = np.empty_like(z)
    _stage_forward(z, draws, threshold, scale, use_mask, pooled, idx, deriv)
    return pooled, idx, deriv


def stage_backward(g_pooled: np.ndarray, idx: np.ndarray, deriv: np.ndarray) -> np.ndarray:
    g_z = np.empty_like(deriv)
    _stage_backward(np.ascontiguousarray(g_pooled), idx, deriv, g_z)
    return g_z
