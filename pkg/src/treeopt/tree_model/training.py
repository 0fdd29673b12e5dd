"""Squared-loss gradient boosting with leaf-wise tree growth."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .ensemble import LEAF, Tree, TreeEnsemble

MAX_CANDIDATES = 256


@dataclass(frozen=True)
class GBRTParams:
    num_trees: int = 400
    max_depth: int = 3
    max_leaves: int = 5
    min_samples_leaf: int = 20
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")

    @classmethod
    def large(cls, **overrides) -> GBRTParams:
        """Bigger, shallower preset (800 trees of depth 2)."""
        return cls(**{"num_trees": 800, "max_depth": 2, **overrides})


@dataclass
class _Split:
    gain: float
    feature: int
    threshold: float
    left: np.ndarray
    right: np.ndarray


def _best_split(X, r, idx, feature_order, min_leaf):
    n = len(idx)
    if n < 2 * min_leaf:
        return None
    rs = r[idx]
    total = rs.sum()
    base = total * total / n
    scale = max(float(np.dot(rs, rs)), 1e-300)
    best = None
    for f in feature_order:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        cs = np.cumsum(rs[order])
        # p = number of samples sent left
        p = np.arange(min_leaf, n - min_leaf + 1)
        p = p[xs[p - 1] < xs[p]]
        if len(p) == 0:
            continue
        if len(p) > MAX_CANDIDATES:
            p = p[np.unique(np.linspace(0, len(p) - 1, MAX_CANDIDATES).round().astype(int))]
        sl = cs[p - 1]
        gain = sl * sl / p + (total - sl) ** 2 / (n - p) - base
        k = int(np.argmax(gain))
        if gain[k] <= 1e-12 * scale:
            continue
        if best is None or gain[k] > best.gain:
            lo, hi = xs[p[k] - 1], xs[p[k]]
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:
                thr = lo
            best = _Split(float(gain[k]), int(f), float(thr), idx[order[: p[k]]], idx[order[p[k]:]])
    return best


def _grow(X, r, params: GBRTParams, feature_order) -> tuple[Tree, np.ndarray]:
    # leaf-wise growth: always split the open leaf with the largest gain
    nodes = [{"idx": np.arange(len(r)), "depth": 0}]
    heap = []
    counter = 0

    def consider(k):
        nonlocal counter
        node = nodes[k]
        if node["depth"] >= params.max_depth:
            return
        split = _best_split(X, r, node["idx"], feature_order, params.min_samples_leaf)
        if split is not None:
            heapq.heappush(heap, (-split.gain, counter, k, split))
            counter += 1

    consider(0)
    n_leaves = 1
    while heap and n_leaves < params.max_leaves:
        _, _, k, split = heapq.heappop(heap)
        depth = nodes[k]["depth"] + 1
        nodes[k].update(feature=split.feature, threshold=split.threshold,
                        left=len(nodes), right=len(nodes) + 1)
        nodes.append({"idx": split.left, "depth": depth})
        nodes.append({"idx": split.right, "depth": depth})
        n_leaves += 1
        consider(len(nodes) - 2)
        consider(len(nodes) - 1)

    # renumber into preorder
    order, stack = [], [0]
    while stack:
        k = stack.pop()
        order.append(k)
        if "feature" in nodes[k]:
            stack.append(nodes[k]["right"])
            stack.append(nodes[k]["left"])
    pos = {k: i for i, k in enumerate(order)}
    size = len(order)
    feature = np.full(size, LEAF, dtype=np.int64)
    threshold = np.zeros(size)
    left = np.full(size, -1, dtype=np.int64)
    right = np.full(size, -1, dtype=np.int64)
    value = np.zeros(size)
    fitted = np.zeros(len(r))
    for i, k in enumerate(order):
        node = nodes[k]
        if "feature" in node:
            feature[i] = node["feature"]
            threshold[i] = node["threshold"]
            left[i] = pos[node["left"]]
            right[i] = pos[node["right"]]
        else:
            value[i] = params.learning_rate * float(np.mean(r[node["idx"]]))
            fitted[node["idx"]] = value[i]
    return Tree(feature, threshold, left, right, value), fitted


def train(dataset, params: GBRTParams | None = None, callback=None) -> TreeEnsemble:
    """Fit a gradient-boosted regression ensemble to ``dataset.X``, ``dataset.y``.

    Squared loss. The base offset is the target mean; each stage fits the current
    residuals and its leaf values are shrunk by ``learning_rate``. Split
    search is exact over at most 256 quantile candidates per feature.
    ``callback(stage, predictions)`` is invoked after every stage.
    """
    params = params or GBRTParams()
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")

    # seed only fixes the scan order, which decides ties between equal-gain splits
    feature_order = np.random.default_rng(params.seed).permutation(X.shape[1])
    base = float(np.mean(y))
    pred = np.full(len(y), base)
    trees = []
    for stage in range(params.num_trees):
        tree, fitted = _grow(X, y - pred, params, feature_order)
        trees.append(tree)
        pred = pred + fitted
        if callback is not None:
            callback(stage, pred)
    return TreeEnsemble(tuple(trees), base, X.shape[1])
