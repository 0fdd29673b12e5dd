"""Acquisition problems over a tree ensemble and a reference set."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..data import Dataset
from ..tree_model import IntervalGrid, LeafTable, TreeEnsemble, build_interval_grid
from ..tree_model.grid import total
from ..uncertainty import (
    Metric,
    ReferenceSet,
    RefKind,
    Standardizer,
    alpha_limit as compute_alpha_limit,
    big_m as compute_big_m,
    fit_standardizer,
    kmeans,
)


class Mode(str, Enum):
    EXPLORE = "explore"
    PENALTY = "penalty"
    CLUSTER_PENALTY = "cluster-penalty"

    @property
    def is_penalty(self) -> bool:
        return self is not Mode.EXPLORE


@dataclass(eq=False)
class AcquisitionProblem:
    """Minimize ``mu(x) - kappa * min(alpha_limit, D(x))`` (explore) or
    ``mu(x) + kappa * D(x)`` (penalty modes), where ``D`` is the distance
    to the closest reference point."""

    mode: Mode
    ensemble: TreeEnsemble
    grid: IntervalGrid
    refs: ReferenceSet
    std: Standardizer
    metric: Metric
    kappa: float
    alpha_limit: float | None = None
    big_m: float = field(init=False)
    table: LeafTable = field(init=False, repr=False)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.metric = Metric.parse(self.metric)
        if self.kappa < 0 or not np.isfinite(self.kappa):
            raise ValueError("kappa must be a finite non-negative number")
        if (self.refs.kind is RefKind.CLUSTER) != (self.mode is Mode.CLUSTER_PENALTY):
            raise ValueError("cluster references are required exactly in cluster-penalty mode")
        if self.mode is Mode.EXPLORE:
            if self.alpha_limit is None or not np.isfinite(self.alpha_limit) or self.alpha_limit < 0:
                raise ValueError("explore mode needs a finite non-negative alpha_limit")
        n = self.grid.dim
        if self.ensemble.num_features != n or self.refs.points.shape[1] != n or self.std.mean.shape[0] != n:
            raise ValueError("ensemble, grid, references and standardizer disagree on dimension")
        self.big_m = compute_big_m(self.grid, self.std, self.metric)
        self.table = LeafTable(self.ensemble, self.grid)
        # standardized grid edges, used by every box distance bound
        self.std_edges = tuple((e - m) / s for e, m, s in zip(self.grid.edges, self.std.mean, self.std.std))

    @property
    def dim(self) -> int:
        return self.grid.dim

    def uncertainty_term(self, dist: np.ndarray) -> np.ndarray:
        if self.mode is Mode.EXPLORE:
            return -self.kappa * np.minimum(self.alpha_limit, dist)
        return self.kappa * dist


def _check_in_bounds(problem: AcquisitionProblem, X: np.ndarray) -> None:
    if X.shape[1] != problem.dim:
        raise ValueError(f"expected points of dimension {problem.dim}, got {X.shape[1]}")
    if np.any(X < problem.grid.lower) or np.any(X > problem.grid.upper):
        raise ValueError("point lies outside the problem bounds")


def evaluate_many(problem: AcquisitionProblem, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_in_bounds(problem, X)
    leaf = problem.ensemble.leaf_values(X)
    mu = np.array([total(problem.ensemble.base_offset, row) for row in leaf])
    U = problem.std.transform(X)
    dist = problem.metric.aggregate(U[:, None, :] - problem.refs.points[None, :, :]).min(axis=1)
    return mu + problem.uncertainty_term(dist)


def evaluate_acquisition(problem: AcquisitionProblem, x) -> float:
    return float(evaluate_many(problem, np.asarray(x, dtype=float)[None, :])[0])


def build_problem(
    ensemble: TreeEnsemble,
    dataset: Dataset,
    lower,
    upper,
    mode=Mode.EXPLORE,
    metric=Metric.SQEUCLIDEAN,
    kappa: float = 1.96,
    zeta: float = 0.5,
    cluster_count: int | None = None,
    seed: int = 0,
    std: Standardizer | None = None,
) -> AcquisitionProblem:
    """Assemble the acquisition problem for a trained model and its data."""
    mode = Mode(mode)
    std = std or fit_standardizer(dataset)
    grid = build_interval_grid(ensemble, lower, upper)
    if mode is Mode.CLUSTER_PENALTY:
        k = min(cluster_count or len(dataset), len(dataset))
        refs = kmeans(std.transform(dataset.X), k, seed=seed)
    else:
        refs = ReferenceSet.from_data(dataset, std)
    limit = compute_alpha_limit(zeta, dataset.y) if mode is Mode.EXPLORE else None
    return AcquisitionProblem(mode, ensemble, grid, refs, std, Metric.parse(metric), kappa, limit)
