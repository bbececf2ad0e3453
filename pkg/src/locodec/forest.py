"""Bagged CART regression forest.

Each tree is grown on a bootstrap sample of the rows; every split scans a
random feature subset (a third of the features by default, rounded up) for
the variance-reducing threshold, placed midway between consecutive distinct
values. Leaves predict their training mean and the ensemble averages the
trees. Thresholds and leaf values are quantized to float32 when the fit
finishes so serialized trees reproduce in-memory predictions bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ForestSpec:
    n_trees: int = 100
    max_depth: int | None = 12
    min_samples_leaf: int = 1
    bootstrap: bool = True
    max_features: float | str = "third"  # "third", "all", or a fraction
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; feature -1 marks a leaf, children index into the
    same arrays."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size


@dataclass(frozen=True)
class Forest:
    spec: ForestSpec
    n_features: int
    trees: tuple[Tree, ...]


def _n_split_features(spec: ForestSpec, d: int) -> int:
    if spec.max_features == "third":
        return max(1, math.ceil(d / 3))
    if spec.max_features == "all":
        return d
    frac = float(spec.max_features)
    if not 0.0 < frac <= 1.0:
        raise ValueError(f"max_features fraction must be in (0, 1], got {frac}")
    return max(1, math.ceil(frac * d))


def _best_split(x_col: np.ndarray, y: np.ndarray, min_leaf: int):
    """Lowest-SSE threshold on one feature, or None if no valid cut exists."""
    order = np.argsort(x_col, kind="stable")
    xs = x_col[order]
    ys = y[order]
    n = ys.size
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    n_left = np.arange(1, n)
    n_right = n - n_left
    sum_l = csum[:-1]
    sq_l = csq[:-1]
    sum_r = csum[-1] - sum_l
    sq_r = csq[-1] - sq_l
    sse = (sq_l - sum_l * sum_l / n_left) + (sq_r - sum_r * sum_r / n_right)
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    i = int(np.argmin(sse))
    return float(sse[i]), 0.5 * (xs[i] + xs[i + 1])


def _grow_tree(x: np.ndarray, y: np.ndarray, spec: ForestSpec, rng) -> Tree:
    d = x.shape[1]
    k_feats = _n_split_features(spec, d)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    # Explicit stack: (node index, row indices, depth).
    root = new_node()
    stack = [(root, np.arange(x.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        ys = y[rows]
        mean = float(ys.mean())
        value[node] = mean
        if (
            (spec.max_depth is not None and depth >= spec.max_depth)
            or rows.size < 2 * spec.min_samples_leaf
            or rows.size < 2
            or np.ptp(ys) == 0.0
        ):
            continue
        feats = rng.choice(d, size=k_feats, replace=False)
        best = None
        for f in feats:
            cand = _best_split(x[rows, f], ys, spec.min_samples_leaf)
            if cand is not None and (best is None or cand[0] < best[0]):
                best = (cand[0], int(f), cand[1])
        if best is None:
            continue
        _, f, thr = best
        go_left = x[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node()
        right[node] = new_node()
        stack.append((left[node], rows[go_left], depth + 1))
        stack.append((right[node], rows[~go_left], depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float32).astype(np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float32).astype(np.float64),
    )


def forest_fit(x: np.ndarray, y: np.ndarray, spec: ForestSpec = ForestSpec()) -> Forest:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
        raise ValueError(f"forest_fit expects (n, d) features and (n,) targets, got {x.shape}, {y.shape}")
    if y.size < 1:
        raise ValueError("forest_fit needs at least one row")
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_trees)
    trees = []
    for t in range(spec.n_trees):
        rng = np.random.default_rng(seeds[t])
        rows = rng.integers(0, y.size, size=y.size) if spec.bootstrap else np.arange(y.size)
        trees.append(_grow_tree(x[rows], y[rows], spec, rng))
    return Forest(spec=spec, n_features=x.shape[1], trees=tuple(trees))


def _tree_predict(tree: Tree, x: np.ndarray) -> np.ndarray:
    idx = np.zeros(x.shape[0], dtype=np.int64)
    while True:
        feats = tree.feature[idx]
        at_leaf = feats < 0
        if at_leaf.all():
            return tree.value[idx]
        safe = np.where(at_leaf, 0, feats)
        go_left = x[np.arange(x.shape[0]), safe] <= tree.threshold[idx]
        nxt = np.where(go_left, tree.left[idx], tree.right[idx])
        idx = np.where(at_leaf, idx, nxt)


def forest_predict(forest: Forest, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != forest.n_features:
        raise ValueError(f"forest expects {forest.n_features} features, got {x.shape[1]}")
    acc = np.zeros(x.shape[0])
    for tree in forest.trees:
        acc += _tree_predict(tree, x)
    return acc / len(forest.trees)
