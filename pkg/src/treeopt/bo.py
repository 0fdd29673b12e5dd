"""Sequential Bayesian optimization with tree-ensemble surrogates."""

from __future__ import annotations

import csv
import io
import json
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import __version__
from .data import Dataset, format_float
from .solver import Mode, SolveResult, SolverConfig, build_problem, evaluate_many, solve
from .tree_model import GBRTParams, predict, train
from .uncertainty import Metric, fit_standardizer

DUPLICATE_TOL = 1e-9
DEFAULT_BO_NODE_LIMIT = 2000


@dataclass(frozen=True)
class BOConfig:
    budget: int = 300
    init_points: int = 50
    kappa: float = 1.96
    zeta: float = 0.5
    mode: Mode = Mode.EXPLORE
    metric: Metric = Metric.SQEUCLIDEAN
    gbrt: GBRTParams = field(default_factory=GBRTParams)
    cluster_count: int | None = None
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(node_limit=DEFAULT_BO_NODE_LIMIT))
    seed: int = 0
    record_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "metric", Metric.parse(self.metric))
        if self.init_points < 1:
            raise ValueError("init_points must be >= 1")
        if not self.init_points < self.budget:
            raise ValueError("init_points must be smaller than budget")
        if self.kappa < 0 or self.zeta < 0:
            raise ValueError("kappa and zeta must be non-negative")
        if self.mode is Mode.CLUSTER_PENALTY and self.cluster_count is not None and self.cluster_count < 1:
            raise ValueError("cluster_count must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["metric"] = self.metric.value
        return d


def init_design(lower, upper, count: int, seed: int) -> np.ndarray:
    """Uniform samples from the per-seed shared stream, drawn row by row."""
    rng = np.random.default_rng(seed)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return rng.uniform(lower, upper, size=(count, len(lower)))


def _aux_rng(seed: int, salt: int = 1):
    # separate from the init stream so the design is identical across modes
    return np.random.default_rng([int(seed), salt])


class Trace:
    """Per-evaluation records of a campaign."""

    def __init__(self, dim: int):
        self.dim = dim
        self.rows: list[dict] = []
        self.aborted: str | None = None

    def __len__(self):
        return len(self.rows)

    def add(self, x, f: float, phase: str, result: SolveResult | None = None, seconds: float | None = None) -> None:
        best = f if not self.rows else min(self.rows[-1]["best"], f)
        self.rows.append({
            "iter": len(self.rows),
            "phase": phase,
            "x": np.array(x, dtype=float),
            "f": float(f),
            "best": float(best),
            "ub": None if result is None else result.upper_bound,
            "lb": None if result is None else result.lower_bound,
            "gap": None if result is None else result.rel_gap,
            "nodes": None if result is None else result.nodes_explored,
            "seconds": seconds,
        })

    @property
    def X(self) -> np.ndarray:
        return np.array([r["x"] for r in self.rows]).reshape(-1, self.dim)

    @property
    def f(self) -> np.ndarray:
        return np.array([r["f"] for r in self.rows])

    @property
    def best(self) -> np.ndarray:
        return np.array([r["best"] for r in self.rows])

    def header(self) -> list[str]:
        return ["iter", "phase"] + [f"x_{i}" for i in range(self.dim)] + ["f", "best", "ub", "lb", "gap", "nodes", "seconds"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())

        def cell(v):
            if v is None:
                return ""
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            return format_float(v)

        for r in self.rows:
            w.writerow([r["iter"], r["phase"]] + [format_float(v) for v in r["x"]]
                       + [cell(r[k]) for k in ("f", "best", "ub", "lb", "gap", "nodes", "seconds")])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def manifest(config: BOConfig, extra: dict | None = None) -> dict:
    doc = {
        "config": config.to_dict(),
        "seed": config.seed,
        "versions": {"treeopt": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    doc.update(extra or {})
    return doc


def write_manifest(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


@dataclass(frozen=True)
class Proposal:
    x: np.ndarray
    result: SolveResult
    guarded: str | None = None  # "midpoint" or "random" when the duplicate guard fired


def _is_duplicate(x, X, std) -> bool:
    if len(X) == 0:
        return False
    d = np.abs(std.transform(X) - std.transform(x)).sum(axis=1)
    return bool(d.min() <= DUPLICATE_TOL)


def propose(dataset: Dataset, bounds, config: BOConfig, iteration: int = 0) -> Proposal:
    """Train, assemble the acquisition problem, solve it and return the next query point."""
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    ensemble = train(dataset, config.gbrt)
    std = fit_standardizer(dataset)
    problem = build_problem(
        ensemble, dataset, lower, upper, mode=config.mode, metric=config.metric, kappa=config.kappa,
        zeta=config.zeta, cluster_count=config.cluster_count, seed=config.seed, std=std,
    )
    result = solve(problem, config.solver)
    x = np.clip(result.x_next, lower, upper)
    if not _is_duplicate(x, dataset.X, std):
        return Proposal(x, result)
    mid = problem.grid.cell_midpoint(problem.grid.cell_of(x))
    if not _is_duplicate(mid, dataset.X, std):
        return Proposal(mid, result, "midpoint")
    rng = _aux_rng(config.seed, 1000 + iteration)
    return Proposal(rng.uniform(lower, upper), result, "random")


def run_campaign(blackbox: Callable, bounds, config: BOConfig, progress: Callable | None = None) -> Trace:
    """Initial design followed by model-based proposals until the budget is spent.

    A failing black box stops the campaign; the partial trace is returned
    with ``aborted`` set to the error message.
    """
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    if lower.shape != upper.shape or not np.all(lower < upper):
        raise ValueError("invalid bounds")
    trace = Trace(len(lower))
    X0 = init_design(lower, upper, config.init_points, config.seed)

    def evaluate(x):
        f = float(blackbox(x))
        if not np.isfinite(f):
            raise ValueError(f"black box returned non-finite value {f}")
        return f

    try:
        for x in X0:
            t0 = time.perf_counter()
            f = evaluate(x)
            trace.add(x, f, "init", seconds=(time.perf_counter() - t0) if config.record_time else None)
        data = Dataset(trace.X, trace.f)
        for it in range(config.init_points, config.budget):
            t0 = time.perf_counter()
            prop = propose(data, (lower, upper), config, iteration=it)
            f = evaluate(prop.x)
            seconds = time.perf_counter() - t0 if config.record_time else None
            trace.add(prop.x, f, "optimize", prop.result, seconds)
            data = data.append(prop.x, f)
            if progress:
                progress(trace)
    except Exception as exc:  # the black box is arbitrary user code
        trace.aborted = f"{type(exc).__name__}: {exc}"
    return trace


def random_acq_optimize(problem, n_samples: int, seed: int = 0) -> tuple[np.ndarray, float]:
    """Minimize the acquisition over ``n_samples`` seeded uniform points."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(problem.grid.lower, problem.grid.upper, size=(n_samples, problem.dim))
    values = np.concatenate([evaluate_many(problem, X[i:i + 4096]) for i in range(0, n_samples, 4096)])
    k = int(np.argmin(values))
    return X[k], float(values[k])


def relative_model_error(mu: float, f: float) -> float:
    """``|(mu - f) / mu|``; NaN when the prediction is exactly zero."""
    if mu == 0:
        return float("nan")
    return abs((mu - f) / mu)


STUDY_COLUMNS = [
    "kappa", "n", "excluded", "median_error", "q1_error", "q3_error",
    "band_lo_error", "band_hi_error", "median_mu", "q1_mu", "q3_mu",
]


@dataclass
class StudyResult:
    metric: Metric
    kappas: list
    records: list  # (seed, kappa, mu, f, error, x)
    table: list  # one dict per kappa, keys STUDY_COLUMNS

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for row in self.table:
            w.writerow([row[c] if isinstance(row[c], int) else format_float(row[c]) for c in STUDY_COLUMNS])
        return buf.getvalue()


def _summary(values: np.ndarray) -> tuple[float, float, float, float, float]:
    """Median, conventional quartiles and the median +- range/4 band."""
    if len(values) == 0:
        nan = float("nan")
        return nan, nan, nan, nan, nan
    med = float(np.median(values))
    q1, q3 = (float(v) for v in np.percentile(values, [25, 75]))
    half = (float(values.max()) - float(values.min())) / 4
    return med, q1, q3, med - half, med + half


def uncertainty_study(blackbox: Callable, bounds, kappa_grid, n_train: int = 200, seeds=range(101, 111),
                      metric=Metric.SQEUCLIDEAN, gbrt: GBRTParams | None = None,
                      solver: SolverConfig | None = None) -> StudyResult:
    """Relative model error at the penalty-mode optimum across a grid of kappa values."""
    kappas = sorted(float(k) for k in kappa_grid)
    if not kappas:
        raise ValueError("kappa_grid must not be empty")
    metric = Metric.parse(metric)
    gbrt = gbrt or GBRTParams()
    solver = solver or SolverConfig(node_limit=DEFAULT_BO_NODE_LIMIT)
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    records = []
    for seed in seeds:
        X = init_design(lower, upper, n_train, seed)
        y = np.array([float(blackbox(x)) for x in X])
        data = Dataset(X, y)
        ensemble = train(data, replace(gbrt, seed=int(seed)))
        std = fit_standardizer(data)
        for kappa in kappas:
            problem = build_problem(ensemble, data, lower, upper, mode=Mode.PENALTY, metric=metric, kappa=kappa, std=std)
            x = solve(problem, replace(solver, seed=int(seed))).x_next
            mu = predict(ensemble, x)
            f = float(blackbox(x))
            records.append((int(seed), kappa, mu, f, relative_model_error(mu, f), x))
    table = []
    for kappa in kappas:
        rows = [r for r in records if r[1] == kappa]
        err = np.array([r[4] for r in rows if not np.isnan(r[4])])
        mus = np.array([r[2] for r in rows])
        med, q1, q3, blo, bhi = _summary(err)
        mmed, mq1, mq3, _, _ = _summary(mus)
        table.append({
            "kappa": kappa, "n": len(rows), "excluded": len(rows) - len(err),
            "median_error": med, "q1_error": q1, "q3_error": q3, "band_lo_error": blo, "band_hi_error": bhi,
            "median_mu": mmed, "q1_mu": mq1, "q3_mu": mq3,
        })
    return StudyResult(metric, kappas, records, table)
