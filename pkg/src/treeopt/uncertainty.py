"""Distance-based uncertainty: standardization, metrics, clustering and box bounds.

Distances are always measured between standardized coordinates, i.e. a raw
point ``x`` is mapped to ``(x - mean) / std`` before it is compared with a
reference point that is already stored in standardized form.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import Dataset
from .tree_model.grid import IntervalGrid


class Metric(str, Enum):
    SQEUCLIDEAN = "sqeuclidean"
    MANHATTAN = "manhattan"

    @classmethod
    def parse(cls, value) -> Metric:
        if isinstance(value, Metric):
            return value
        aliases = {"l2": cls.SQEUCLIDEAN, "sqeuclidean": cls.SQEUCLIDEAN, "euclidean_squared": cls.SQEUCLIDEAN,
                   "l1": cls.MANHATTAN, "manhattan": cls.MANHATTAN}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown metric {value!r}; use 'sqeuclidean' or 'manhattan'") from None

    def aggregate(self, deltas: np.ndarray, axis=-1) -> np.ndarray:
        """Combine per-dimension standardized offsets into a distance."""
        if self is Metric.MANHATTAN:
            return np.abs(deltas).sum(axis=axis)
        return np.square(deltas).sum(axis=axis)

    def per_dim(self, deltas: np.ndarray) -> np.ndarray:
        return np.abs(deltas) if self is Metric.MANHATTAN else np.square(deltas)


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        std = np.asarray(self.std, dtype=float).ravel()
        if mean.shape != std.shape:
            raise ValueError("mean and std must have the same length")
        if not np.all(std > 0):
            raise ValueError("std entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def identity(cls, dim: int) -> Standardizer:
        return cls(np.zeros(dim), np.ones(dim))

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float) * self.std + self.mean


def fit_standardizer(dataset: Dataset) -> Standardizer:
    """Population mean and standard deviation per feature; zero spreads become 1."""
    mean = dataset.X.mean(axis=0)
    std = dataset.X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Standardizer(mean, std)


class RefKind(str, Enum):
    DATA = "data"
    CLUSTER = "cluster"


@dataclass(frozen=True, eq=False)
class ReferenceSet:
    """Standardized reference points: the observed inputs or cluster centers."""

    points: np.ndarray
    kind: RefKind = RefKind.DATA

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0 or pts.size == 0:
            raise ValueError("reference set must not be empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("reference coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "kind", RefKind(self.kind))

    @classmethod
    def from_data(cls, dataset: Dataset, std: Standardizer) -> ReferenceSet:
        return cls(std.transform(dataset.X), RefKind.DATA)

    def __len__(self):
        return self.points.shape[0]


def distance(x, ref, std: Standardizer, metric) -> float:
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape or x.shape != std.mean.shape:
        raise ValueError("dimension mismatch between point, reference and standardizer")
    return float(Metric.parse(metric).aggregate(std.transform(x) - ref))


def distance_matrix(X, refs: ReferenceSet, std: Standardizer, metric) -> np.ndarray:
    """Distances from every raw row of ``X`` to every reference; shape (rows, refs)."""
    U = std.transform(np.atleast_2d(X))
    return Metric.parse(metric).aggregate(U[:, None, :] - refs.points[None, :, :])


def min_distance(x, refs: ReferenceSet, std: Standardizer, metric) -> float:
    return float(distance_matrix(np.asarray(x, dtype=float)[None, :], refs, std, metric).min())


def alpha_limit(zeta: float, targets) -> float:
    """Exploration cap ``zeta * Var(y)`` with the population variance of raw targets."""
    if zeta < 0:
        raise ValueError("zeta must be non-negative")
    return float(zeta * np.var(np.asarray(targets, dtype=float)))


def big_m(grid: IntervalGrid, std: Standardizer, metric) -> float:
    """Constant that dominates every distance between two points of the domain.

    For the squared metric each per-dimension extent is squared, so the
    constant bounds the squared distance.
    """
    extent = (grid.upper - grid.lower) / std.std
    return float(Metric.parse(metric).aggregate(extent))


def lloyd(points, k: int, seed: int = 0, max_iters: int = 300):
    """Plain Lloyd iterations from ``k`` distinct sampled points.

    Returns ``(centers, labels, wcss_history)``; empty clusters keep their
    previous center.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    N = pts.shape[0]
    if not 1 <= k <= N:
        raise ValueError(f"k must lie in [1, {N}], got {k}")
    rng = np.random.default_rng(seed)
    centers = pts[np.sort(rng.choice(N, size=k, replace=False))].copy()
    labels = None
    history = []
    for _ in range(max_iters):
        d2 = np.square(pts[:, None, :] - centers[None, :, :]).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(N), new_labels].sum()))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for c in range(k):
            members = pts[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    d2 = np.square(pts - centers[labels]).sum(axis=1)
    history.append(float(d2.sum()))
    return centers, labels, history


def kmeans(points, k: int, seed: int = 0, max_iters: int = 300) -> ReferenceSet:
    centers, _, _ = lloyd(points, k, seed, max_iters)
    return ReferenceSet(centers, RefKind.CLUSTER)


def _std_box(lower, upper, std: Standardizer):
    return std.transform(lower), std.transform(upper)


def project_to_box(ref, lower, upper, std: Standardizer) -> np.ndarray:
    """Raw-space point of the box closest to the (destandardized) reference."""
    slo, shi = _std_box(lower, upper, std)
    return np.clip(std.inverse(np.clip(ref, slo, shi)), lower, upper)


def min_dist_to_box(ref, lower, upper, std: Standardizer, metric) -> float:
    slo, shi = _std_box(lower, upper, std)
    ref = np.asarray(ref, dtype=float)
    return float(Metric.parse(metric).aggregate(ref - np.clip(ref, slo, shi)))


def max_dist_to_box(ref, lower, upper, std: Standardizer, metric) -> float:
    slo, shi = _std_box(lower, upper, std)
    ref = np.asarray(ref, dtype=float)
    far = np.maximum(np.abs(shi - ref), np.abs(ref - slo))
    return float(Metric.parse(metric).aggregate(far))
