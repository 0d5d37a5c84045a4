"""Random forest on aggregated features.

Trees are grown with scikit-learn (bootstrap, Gini, ceil(sqrt(D)) candidate
features per node, midpoint thresholds, grown to purity) and then copied
into plain node arrays, which is what prediction and the model file use.

Forest file layout (little-endian)::

    magic         4 bytes  b"RFST"
    version       uint16   (1)
    n_features    uint32
    max_features  uint32
    seed          int64
    n_trees       uint32
    per tree:
        n_nodes   uint32
        n_nodes records of 28 bytes:
            feature    int32    (-1 for a leaf)
            threshold  float64  (go left when x[feature] <= threshold)
            left       int32    (-1 for a leaf)
            right      int32    (-1 for a leaf)
            value      float64  (leaf positive fraction; node fraction otherwise)

Inputs are rounded to float32 before comparison, matching the precision
the thresholds were chosen at.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .linear import BaselineError

MAGIC = b"RFST"
VERSION = 1
_HEAD = struct.Struct("<4sHIIqI")
NODE_DTYPE = np.dtype(
    [("feature", "<i4"), ("threshold", "<f8"), ("left", "<i4"), ("right", "<i4"), ("value", "<f8")]
)


@dataclass
class Tree:
    nodes: np.ndarray  # NODE_DTYPE records, root at 0

    def predict(self, x32: np.ndarray) -> np.ndarray:
        nodes = self.nodes
        at = np.zeros(len(x32), dtype=np.int64)
        rows = np.arange(len(x32))
        while True:
            feat = nodes["feature"][at]
            inner = feat >= 0
            if not inner.any():
                return nodes["value"][at]
            r = rows[inner]
            a = at[inner]
            go_left = x32[r, feat[inner]] <= nodes["threshold"][a]
            at[inner] = np.where(go_left, nodes["left"][a], nodes["right"][a])


@dataclass
class Forest:
    trees: list[Tree]
    n_features: int
    max_features: int
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def max_features_rule(d: int) -> int:
    return max(1, math.ceil(math.sqrt(d)))


def _copy_tree(est) -> Tree:
    t = est.tree_
    nodes = np.zeros(t.node_count, dtype=NODE_DTYPE)
    leaf = t.children_left < 0
    nodes["feature"] = np.where(leaf, -1, t.feature)
    nodes["threshold"] = np.where(leaf, 0.0, t.threshold)
    nodes["left"] = np.where(leaf, -1, t.children_left)
    nodes["right"] = np.where(leaf, -1, t.children_right)
    value = t.value[:, 0, :]
    frac = value / value.sum(axis=1, keepdims=True)
    # column of class 1 (classes_ are sorted, and both are present)
    nodes["value"] = frac[:, list(est.classes_).index(1.0)] if frac.shape[1] == 2 else frac[:, 0]
    return Tree(nodes)


def rf_train(
    inputs, labels, n_trees: int = 200, seed: int = 0, max_features: int | None = None
) -> Forest:
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels).ravel().astype(np.float64)
    if len(x) < 2:
        raise BaselineError("random forest needs at least 2 examples")
    if y.min() == y.max():
        raise BaselineError("random forest training labels have a single class")
    if not np.isfinite(x).all():
        raise BaselineError("non-finite random forest input")
    d = x.shape[1]
    mf = max_features_rule(d) if max_features is None else int(max_features)
    model = RandomForestClassifier(
        n_estimators=n_trees,
        criterion="gini",
        max_features=mf,
        bootstrap=True,
        min_samples_split=2,
        random_state=seed,
        n_jobs=1,
    )
    model.fit(x, y)
    return Forest([_copy_tree(e) for e in model.estimators_], d, mf, seed)


def rf_predict(forest: Forest, inputs, n_trees: int | None = None) -> np.ndarray:
    """Mean leaf positive fraction over the first ``n_trees`` trees (default all)."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != forest.n_features:
        raise BaselineError(f"forest expects {forest.n_features} features, got {x.shape[1]}")
    x32 = x.astype(np.float32).astype(np.float64)
    trees = forest.trees[: n_trees or forest.n_trees]
    return np.mean([t.predict(x32) for t in trees], axis=0)


def save_forest(path: str | Path, forest: Forest) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, forest.n_features, forest.max_features, forest.seed, forest.n_trees))
        for t in forest.trees:
            fh.write(struct.pack("<I", len(t.nodes)))
            fh.write(np.ascontiguousarray(t.nodes, dtype=NODE_DTYPE).tobytes())


def load_forest(path: str | Path) -> Forest:
    buf = Path(path).read_bytes()
    magic, version, d, mf, seed, n_trees = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BaselineError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BaselineError(f"{path}: unsupported version {version}")
    pos = _HEAD.size
    trees = []
    for _ in range(n_trees):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        nodes = np.frombuffer(buf, dtype=NODE_DTYPE, count=n, offset=pos).copy()
        pos += n * NODE_DTYPE.itemsize
        trees.append(Tree(nodes))
    if pos != len(buf):
        raise BaselineError(f"{path}: {len(buf) - pos} trailing bytes")
    return Forest(trees, d, mf, seed)
