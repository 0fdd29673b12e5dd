"""Regression tree ensembles and point prediction."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

LEAF = -1


@dataclass(frozen=True, eq=False)
class Tree:
    """A binary regression tree stored as flat preorder node arrays.

    ``feature[k] == -1`` marks node ``k`` as a leaf holding ``value[k]``.
    Internal nodes send ``x[feature] <= threshold`` to ``left`` and
    everything else to ``right``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        size = len(self.feature)
        if size == 0:
            raise ValueError("tree must have at least one node")
        for name in ("threshold", "left", "right", "value"):
            if len(getattr(self, name)) != size:
                raise ValueError(f"tree field {name!r} has inconsistent length")
        internal = self.feature != LEAF
        if np.any(self.feature[internal] < 0):
            raise ValueError("negative feature index in split node")
        if not np.all(np.isfinite(self.threshold[internal])):
            raise ValueError("split thresholds must be finite")
        if not np.all(np.isfinite(self.value[~internal])):
            raise ValueError("leaf values must be finite")
        for side in (self.left, self.right):
            kids = side[internal]
            if np.any((kids <= 0) | (kids >= size)):
                raise ValueError("child reference out of range")
        # every non-root node must be referenced exactly once
        refs = np.concatenate([self.left[internal], self.right[internal]])
        if len(refs) != size - 1 or len(np.unique(refs)) != size - 1:
            raise ValueError("tree is not a rooted binary tree")

    @classmethod
    def from_nodes(cls, nodes: Sequence[dict]) -> Tree:
        """Build from ``{feature, threshold, left, right}`` / ``{value}`` records."""
        size = len(nodes)
        feature = np.full(size, LEAF, dtype=np.int64)
        threshold = np.zeros(size)
        left = np.full(size, -1, dtype=np.int64)
        right = np.full(size, -1, dtype=np.int64)
        value = np.zeros(size)
        for k, node in enumerate(nodes):
            if "value" in node:
                value[k] = float(node["value"])
            else:
                feature[k] = int(node["feature"])
                threshold[k] = float(node["threshold"])
                left[k] = int(node["left"])
                right[k] = int(node["right"])
        return cls(feature, threshold, left, right, value)

    @classmethod
    def leaf(cls, value: float) -> Tree:
        return cls.from_nodes([{"value": value}])

    def to_nodes(self) -> list[dict]:
        nodes = []
        for k in range(len(self.feature)):
            if self.feature[k] == LEAF:
                nodes.append({"value": float(self.value[k])})
            else:
                nodes.append({
                    "feature": int(self.feature[k]),
                    "threshold": float(self.threshold[k]),
                    "left": int(self.left[k]),
                    "right": int(self.right[k]),
                })
        return nodes

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @cached_property
    def leaves(self) -> np.ndarray:
        """Node indices of the leaves, ascending."""
        return np.flatnonzero(self.feature == LEAF)

    @cached_property
    def splits(self) -> np.ndarray:
        return np.flatnonzero(self.feature != LEAF)

    @cached_property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        # preorder guarantees parents precede children
        for k in self.splits:
            depth[self.left[k]] = depth[k] + 1
            depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def leaves_under(self, node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            k = stack.pop()
            if self.feature[k] == LEAF:
                out.append(int(k))
            else:
                stack.append(int(self.right[k]))
                stack.append(int(self.left[k]))
        return sorted(out)

    def leaf_of(self, x: np.ndarray) -> int:
        k = 0
        while self.feature[k] != LEAF:
            k = self.left[k] if x[self.feature[k]] <= self.threshold[k] else self.right[k]
        return int(k)

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("feature", "threshold", "left", "right", "value")
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    """Additive ensemble: ``base_offset + sum(tree(x) for tree in trees)``."""

    trees: tuple[Tree, ...]
    base_offset: float
    num_features: int

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if self.num_features < 1:
            raise ValueError("num_features must be positive")
        if not np.isfinite(self.base_offset):
            raise ValueError("base_offset must be finite")
        for t, tree in enumerate(self.trees):
            if np.any(tree.feature >= self.num_features):
                raise ValueError(f"tree {t} splits on a feature outside [0, {self.num_features})")

    def __eq__(self, other):
        if not isinstance(other, TreeEnsemble):
            return NotImplemented
        return (
            self.num_features == other.num_features
            and self.base_offset == other.base_offset
            and len(self.trees) == len(other.trees)
            and all(a == b for a, b in zip(self.trees, other.trees))
        )

    __hash__ = None

    def __len__(self):
        return len(self.trees)

    @cached_property
    def _packed(self):
        T = len(self.trees)
        width = max((tree.n_nodes for tree in self.trees), default=1)
        feature = np.full((T, width), LEAF, dtype=np.int64)
        threshold = np.zeros((T, width))
        left = np.zeros((T, width), dtype=np.int64)
        right = np.zeros((T, width), dtype=np.int64)
        value = np.zeros((T, width))
        for t, tree in enumerate(self.trees):
            s = tree.n_nodes
            feature[t, :s] = tree.feature
            threshold[t, :s] = tree.threshold
            left[t, :s] = tree.left
            right[t, :s] = tree.right
            value[t, :s] = tree.value
        max_depth = max((tree.depth for tree in self.trees), default=0)
        return feature, threshold, left, right, value, max_depth

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """Per-tree leaf value reached by each row of ``X``; shape (rows, trees)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.num_features:
            raise ValueError(f"expected {self.num_features} features, got {X.shape[1]}")
        P, T = X.shape[0], len(self.trees)
        if T == 0:
            return np.zeros((P, 0))
        feature, threshold, left, right, value, max_depth = self._packed
        tidx = np.arange(T)[None, :]
        node = np.zeros((P, T), dtype=np.int64)
        rows = np.arange(P)[:, None]
        for _ in range(max_depth):
            f = feature[tidx, node]
            internal = f != LEAF
            xv = X[rows, np.where(internal, f, 0)]
            nxt = np.where(xv <= threshold[tidx, node], left[tidx, node], right[tidx, node])
            node = np.where(internal, nxt, node)
        return value[tidx, node]


def predict(ensemble: TreeEnsemble, x) -> float:
    """Ensemble prediction at a single point."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != ensemble.num_features:
        raise ValueError(
            f"dimension mismatch: point has shape {x.shape}, ensemble expects {ensemble.num_features}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("point coordinates must be finite")
    return float(ensemble.base_offset + np.sum(ensemble.leaf_values(x[None, :])[0]))


def predict_many(ensemble: TreeEnsemble, X) -> np.ndarray:
    return ensemble.base_offset + ensemble.leaf_values(X).sum(axis=1)
