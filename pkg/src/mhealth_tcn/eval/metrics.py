"""ROC AUC via the Mann-Whitney statistic."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class AUCError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties counted half.

    Uses average ranks over tie groups, O(n log n).
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise AUCError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise AUCError("AUC undefined: labels contain a single class")
    if not np.isfinite(s).all():
        raise AUCError("AUC undefined: non-finite scores")
    ranks = rankdata(s)  # 1-based, ties averaged; exact halves
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_by_pairs(scores, labels) -> float:
    """Reference O(P*N) pair count."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise AUCError("AUC undefined: labels contain a single class")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def mean_task_auc(probs: np.ndarray, labels: np.ndarray) -> tuple[float, list[int]]:
    """Mean AUC over columns with both classes; returns (mean, skipped columns)."""
    probs = np.atleast_2d(np.asarray(probs).T).T
    labels = np.atleast_2d(np.asarray(labels).T).T
    values, skipped = [], []
    for c in range(labels.shape[1]):
        col = labels[:, c]
        if col.min() == col.max():
            skipped.append(c)
            continue
        values.append(auc(probs[:, c], col))
    return (float(np.mean(values)) if values else float("nan")), skipped
