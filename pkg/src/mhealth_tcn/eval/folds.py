"""Repeated random 50/25/25 train/validation/test splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_USERS = 8


class FoldError(ValueError):
    pass


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "folds": [{"train": list(f.train), "val": list(f.val), "test": list(f.test)} for f in self.folds],
        }


def split_sizes(n: int) -> tuple[int, int, int]:
    n_val = n // 4
    n_test = n // 4
    return n - n_val - n_test, n_val, n_test


def make_folds(user_ids, k: int = 4, seed: int = 0) -> FoldPlan:
    """k independent seeded permutations, each cut 50/25/25."""
    ids = sorted(user_ids)
    if len(ids) < MIN_USERS:
        raise FoldError(f"need at least {MIN_USERS} users for folds, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise FoldError("duplicate user ids")
    if k < 1:
        raise FoldError("k must be >= 1")
    n_train, n_val, _ = split_sizes(len(ids))
    folds = []
    for i in range(k):
        perm = np.random.default_rng([seed, i]).permutation(len(ids))
        order = [ids[j] for j in perm]
        folds.append(
            Fold(
                tuple(order[:n_train]),
                tuple(order[n_train : n_train + n_val]),
                tuple(order[n_train + n_val :]),
            )
        )
    return FoldPlan(tuple(folds), seed)
