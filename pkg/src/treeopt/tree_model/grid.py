"""Interval grids induced by split thresholds, and box-restricted bounds.

Every dimension ``i`` is cut by the sorted interior thresholds
``v[i,1] < ... < v[i,m_i]`` into ``m_i + 1`` cells; cell ``k`` is the
half-open interval ``(v[i,k], v[i,k+1]]`` with ``v[i,0]`` and ``v[i,m_i+1]``
the domain bounds (the first cell is closed at the lower bound). A box is
a product of contiguous cell-index ranges.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .ensemble import LEAF, Tree, TreeEnsemble

DEDUP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class IntervalGrid:
    lower: np.ndarray
    upper: np.ndarray
    thresholds: tuple[np.ndarray, ...]

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("bounds must be 1-D arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("degenerate bounds: every lower bound must be below its upper bound")
        thresholds = tuple(np.asarray(t, dtype=float) for t in self.thresholds)
        if len(thresholds) != len(lower):
            raise ValueError("one threshold array per dimension required")
        for i, t in enumerate(thresholds):
            if len(t) and (np.any(np.diff(t) <= 0) or t[0] < lower[i] or t[-1] >= upper[i]):
                raise ValueError(f"thresholds of dimension {i} must be strictly increasing and inside [lower, upper)")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @cached_property
    def m(self) -> np.ndarray:
        """Threshold count per dimension."""
        return np.array([len(t) for t in self.thresholds], dtype=np.int64)

    @cached_property
    def edges(self) -> tuple[np.ndarray, ...]:
        """``[v_L, v_1, ..., v_m, v_U]`` per dimension."""
        return tuple(
            np.concatenate([[lo], t, [hi]]) for lo, t, hi in zip(self.lower, self.thresholds, self.upper)
        )

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.m + 1, dtype=object))

    def cell_of(self, x) -> tuple[int, ...]:
        x = np.asarray(x, dtype=float)
        return tuple(int(np.searchsorted(t, xi, side="left")) for t, xi in zip(self.thresholds, x))

    def split_index(self, dim: int, threshold: float) -> int:
        """Index ``j`` such that cells ``k < j`` lie on the ``<= threshold`` side."""
        if threshold >= self.upper[dim]:
            return int(self.m[dim]) + 1
        if threshold < self.lower[dim]:
            return 0
        return int(np.searchsorted(self.thresholds[dim], threshold + DEDUP_TOL, side="right"))

    def cell_midpoint(self, cell: Sequence[int]) -> np.ndarray:
        return np.array([0.5 * (e[k] + e[k + 1]) for e, k in zip(self.edges, cell)])


@dataclass(frozen=True)
class Box:
    """Per-dimension inclusive cell-index ranges ``[lo_i, hi_i]``."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    @classmethod
    def full(cls, grid: IntervalGrid) -> Box:
        return cls(tuple([0] * grid.dim), tuple(int(m) for m in grid.m))

    @classmethod
    def cell(cls, index: Sequence[int]) -> Box:
        index = tuple(int(k) for k in index)
        return cls(index, index)

    def validate(self, grid: IntervalGrid) -> None:
        if len(self.lo) != grid.dim or len(self.hi) != grid.dim:
            raise ValueError("box dimensionality does not match grid")
        for a, b, m in zip(self.lo, self.hi, grid.m):
            if not 0 <= a <= b <= m:
                raise ValueError(f"invalid box range [{a}, {b}] for {m} thresholds")

    @property
    def is_cell(self) -> bool:
        return self.lo == self.hi

    @property
    def n_cells(self) -> int:
        out = 1
        for a, b in zip(self.lo, self.hi):
            out *= b - a + 1
        return out

    def contains(self, other: Box) -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def continuous_bounds(self, grid: IntervalGrid) -> tuple[np.ndarray, np.ndarray]:
        lower = np.array([e[a] for e, a in zip(grid.edges, self.lo)])
        upper = np.array([e[b + 1] for e, b in zip(grid.edges, self.hi)])
        return lower, upper

    def cells(self):
        """Iterate cell indices inside the box in lexicographic order."""
        ranges = [range(a, b + 1) for a, b in zip(self.lo, self.hi)]
        idx = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, len(ranges))
        return [tuple(int(v) for v in row) for row in idx]


def build_interval_grid(ensemble: TreeEnsemble, lower, upper) -> IntervalGrid:
    """Collect the ensemble's split thresholds that fall inside ``[lower, upper)``.

    A threshold equal to the lower bound is kept: points on that face go
    left, so it bounds a zero-width first cell ``{lower}``. Thresholds at or
    above the upper bound, or below the lower bound, never change a decision
    inside the domain and are dropped.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != (ensemble.num_features,) or upper.shape != (ensemble.num_features,):
        raise ValueError("bounds must have one entry per feature")
    if not np.all(lower < upper):
        raise ValueError("degenerate bounds: every lower bound must be below its upper bound")
    per_dim = [[] for _ in range(ensemble.num_features)]
    for tree in ensemble.trees:
        for k in tree.splits:
            per_dim[tree.feature[k]].append(tree.threshold[k])
    thresholds = []
    for i, vals in enumerate(per_dim):
        vals = np.sort(np.asarray(vals, dtype=float))
        vals = vals[(vals >= lower[i]) & (vals < upper[i])]
        kept = []
        for v in vals:
            if not kept or v - kept[-1] > DEDUP_TOL:
                kept.append(v)
        thresholds.append(np.array(kept))
    return IntervalGrid(lower, upper, tuple(thresholds))


def reachable_leaves(tree: Tree, box: Box, grid: IntervalGrid) -> list[int]:
    """Leaves whose region meets the box.

    Descends from the root, narrowing the box along each branch, so that
    branches ruled out by the box or by earlier splits on the same path are
    pruned.
    """
    out = []
    stack = [(0, np.array(box.lo), np.array(box.hi))]
    while stack:
        k, lo, hi = stack.pop()
        d = tree.feature[k]
        if d == LEAF:
            out.append(int(k))
            continue
        j = grid.split_index(d, tree.threshold[k])
        if lo[d] < j:
            lhi = hi.copy()
            lhi[d] = min(hi[d], j - 1)
            stack.append((int(tree.left[k]), lo, lhi))
        if hi[d] >= j:
            rlo = lo.copy()
            rlo[d] = max(lo[d], j)
            stack.append((int(tree.right[k]), rlo, hi))
    return sorted(out)


class LeafTable:
    """Leaf regions of every tree as cell-index boxes, packed for vectorized bounds.

    ``lo[t, l]``/``hi[t, l]`` give the inclusive cell range of leaf ``l`` of
    tree ``t``; padding slots carry an empty range and an infinite value so
    they are never reachable.
    """

    def __init__(self, ensemble: TreeEnsemble, grid: IntervalGrid):
        if grid.dim != ensemble.num_features:
            raise ValueError("grid and ensemble dimensionality differ")
        self.ensemble = ensemble
        self.grid = grid
        n, T = grid.dim, len(ensemble.trees)
        width = max((len(tree.leaves) for tree in ensemble.trees), default=1)
        self.lo = np.ones((T, width, n), dtype=np.int64)
        self.hi = np.zeros((T, width, n), dtype=np.int64)
        self.value = np.full((T, width), np.inf)
        self.node = np.full((T, width), -1, dtype=np.int64)
        for t, tree in enumerate(ensemble.trees):
            regions = {}
            stack = [(0, np.zeros(n, dtype=np.int64), grid.m.copy())]
            while stack:
                k, lo, hi = stack.pop()
                d = tree.feature[k]
                if d == LEAF:
                    regions[k] = (lo, hi)
                    continue
                j = grid.split_index(d, tree.threshold[k])
                lhi = hi.copy()
                lhi[d] = min(hi[d], j - 1)
                rlo = lo.copy()
                rlo[d] = max(lo[d], j)
                stack.append((int(tree.left[k]), lo, lhi))
                stack.append((int(tree.right[k]), rlo, hi))
            for slot, k in enumerate(tree.leaves):
                self.lo[t, slot], self.hi[t, slot] = regions[k]
                self.value[t, slot] = tree.value[k]
                self.node[t, slot] = k
        self.base = float(ensemble.base_offset)

    @property
    def n_trees(self) -> int:
        return self.value.shape[0]

    def reach_mask(self, lo, hi) -> np.ndarray:
        """(trees, leaves) mask of leaves meeting the box ``[lo, hi]``."""
        return np.all((self.lo <= hi) & (self.hi >= lo), axis=2)

    def tree_minima(self, lo, hi) -> np.ndarray:
        return np.where(self.reach_mask(lo, hi), self.value, np.inf).min(axis=1)

    def bound(self, lo, hi) -> float:
        return total(self.base, self.tree_minima(lo, hi))


def total(base: float, values: np.ndarray) -> float:
    # single summation path shared by prediction and bounds
    return float(base + np.sum(values))


def min_prediction_bound(ensemble: TreeEnsemble, box: Box, grid: IntervalGrid, table: LeafTable | None = None) -> float:
    """Base offset plus the sum of per-tree minima over leaves reachable in the box."""
    table = table or LeafTable(ensemble, grid)
    return table.bound(np.array(box.lo), np.array(box.hi))


def _group_minimum(table: LeafTable, trees, lo, hi, budget):
    """Exact minimum of the summed group trees over the box, or None if the budget runs out.

    Depth-first search over one leaf per tree. Axis-aligned boxes share a
    point iff they intersect pairwise, so leaf compatibility is precomputed
    once and a partial choice is carried as a bitset of still-compatible
    leaves.
    """
    trees = list(trees)
    sub_lo, sub_hi, sub_val = table.lo[trees], table.hi[trees], table.value[trees]
    t_idx, s_idx = np.nonzero(np.all((sub_lo <= hi) & (sub_hi >= lo), axis=2))
    vals = sub_val[t_idx, s_idx]
    order = np.lexsort((s_idx, vals, t_idx))  # by tree, then value, then slot
    t_idx, s_idx, vals = t_idx[order], s_idx[order], vals[order]
    clo = np.maximum(sub_lo[t_idx, s_idx], lo)
    chi = np.minimum(sub_hi[t_idx, s_idx], hi)
    compat = np.all(np.maximum(clo[:, None, :], clo[None, :, :]) <= np.minimum(chi[:, None, :], chi[None, :, :]), axis=2)
    packed = np.packbits(compat, axis=1, bitorder="little")
    rows = [int.from_bytes(row.tobytes(), "little") for row in packed]

    options = [[] for _ in trees]
    for g, (t, v) in enumerate(zip(t_idx.tolist(), vals.tolist())):
        options[t].append((v, 1 << g, rows[g]))
    suffix = [0.0] * (len(options) + 1)
    for k in range(len(options) - 1, -1, -1):
        suffix[k] = suffix[k + 1] + options[k][0][0]

    best = np.inf
    visited = 0
    stack = [(0, (1 << len(vals)) - 1, 0.0)]
    while stack:
        k, allowed, partial = stack.pop()
        visited += 1
        if visited > budget:
            return None
        if partial + suffix[k] >= best:
            continue
        if k == len(options):
            best = partial
            continue
        children = []
        rest = suffix[k + 1]
        for v, bit, row in options[k]:
            if partial + v + rest >= best:
                break
            if allowed & bit:
                children.append((k + 1, allowed & row, partial + v))
        # push in reverse so the cheapest leaf is explored first
        stack.extend(reversed(children))
    return best


def partition_refine_bound(
    ensemble: TreeEnsemble,
    box: Box,
    grid: IntervalGrid,
    group_size: int = 20,
    node_budget: int = 10_000,
    table: LeafTable | None = None,
) -> float:
    """Lower bound from exact minima of consecutive tree groups.

    A group whose search exceeds ``node_budget`` contributes the sum of its
    per-tree minima instead.
    """
    table = table or LeafTable(ensemble, grid)
    T = table.n_trees
    if T == 0:
        return table.base
    if not 1 <= group_size <= T:
        raise ValueError(f"group_size must lie in [1, {T}]")
    lo, hi = np.array(box.lo), np.array(box.hi)
    return refine_bound(table, lo, hi, group_size, node_budget)


def refine_bound(table: LeafTable, lo, hi, group_size: int, node_budget: int) -> float:
    T = table.n_trees
    minima = table.tree_minima(lo, hi)
    parts = []
    for start in range(0, T, group_size):
        group = range(start, min(start + group_size, T))
        exact = None
        if len(group) > 1:
            exact = _group_minimum(table, group, lo, hi, node_budget)
        fallback = float(np.sum(minima[start:start + len(group)]))
        parts.append(fallback if exact is None else max(exact, fallback))
    return total(table.base, np.array(parts))
