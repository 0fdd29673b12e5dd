"""Synthetic black-box test functions and the pure random-search baseline.

Formulas (x has ``d`` coordinates):

* sphere:           sum x_i^2,                                   [-5.12, 5.12]
* rosenbrock:       sum 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2,   [-2.048, 2.048], d >= 2
* rastrigin:        10 d + sum x_i^2 - 10 cos(2 pi x_i),         [-5.12, 5.12]
* styblinski_tang:  0.5 sum x_i^4 - 16 x_i^2 + 5 x_i,            [-5, 5]
* ackley:           -20 exp(-0.2 sqrt(mean x_i^2)) - exp(mean cos(2 pi x_i)) + 20 + e,   [-5, 10]
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

ST_ARGMIN = -2.903534027771177  # root of 4x^3 - 32x + 5 in [-5, 0]
ST_MIN_PER_DIM = 0.5 * (ST_ARGMIN**4 - 16 * ST_ARGMIN**2 + 5 * ST_ARGMIN)


def sphere(x):
    x = np.asarray(x, dtype=float)
    return np.sum(x**2, axis=-1)


def rosenbrock(x):
    x = np.asarray(x, dtype=float)
    a, b = x[..., :-1], x[..., 1:]
    return np.sum(100.0 * (b - a**2) ** 2 + (1.0 - a) ** 2, axis=-1)


def rastrigin(x):
    x = np.asarray(x, dtype=float)
    return 10.0 * x.shape[-1] + np.sum(x**2 - 10.0 * np.cos(2 * np.pi * x), axis=-1)


def styblinski_tang(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.sum(x**4 - 16.0 * x**2 + 5.0 * x, axis=-1)


def ackley(x):
    x = np.asarray(x, dtype=float)
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.mean(x**2, axis=-1)))
    b = -np.exp(np.mean(np.cos(2 * np.pi * x), axis=-1))
    return a + b + 20.0 + np.e


# name -> (function, lower, upper, minimum dimension)
_REGISTRY = {
    "sphere": (sphere, -5.12, 5.12, 1),
    "rosenbrock": (rosenbrock, -2.048, 2.048, 2),
    "rastrigin": (rastrigin, -5.12, 5.12, 1),
    "styblinski_tang": (styblinski_tang, -5.0, 5.0, 1),
    "ackley": (ackley, -5.0, 10.0, 1),
}


@dataclass(frozen=True, eq=False)
class Benchmark:
    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    evaluator: Callable
    known_optimum: float | None = None
    known_minimizer: np.ndarray | None = None

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.name} expects a point of dimension {self.dim}")
        return float(self.evaluator(x))

    def evaluate_many(self, X) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(X)), dtype=float)


def benchmark_names() -> list[str]:
    return sorted(_REGISTRY)


def make_benchmark(name: str, dim: int) -> Benchmark:
    if name not in _REGISTRY:
        raise ValueError(f"unknown benchmark {name!r}; available: {', '.join(benchmark_names())}")
    fn, lo, hi, min_dim = _REGISTRY[name]
    if int(dim) != dim or dim < min_dim:
        raise ValueError(f"{name} needs an integer dimension >= {min_dim}, got {dim}")
    dim = int(dim)
    if name == "rosenbrock":
        xstar, fstar = np.ones(dim), 0.0
    elif name == "styblinski_tang":
        xstar, fstar = np.full(dim, ST_ARGMIN), dim * ST_MIN_PER_DIM
    else:
        xstar, fstar = np.zeros(dim), 0.0
    return Benchmark(name, dim, np.full(dim, lo), np.full(dim, hi), fn, fstar, xstar)


def random_search(benchmark: Benchmark, budget: int, seed: int = 0):
    """Uniform random sampling; the stream matches the initial design of a campaign with the same seed."""
    from .bo import Trace, init_design

    if budget < 1:
        raise ValueError("budget must be >= 1")
    X = init_design(benchmark.lower, benchmark.upper, budget, seed)
    trace = Trace(benchmark.dim)
    for x in X:
        trace.add(x, benchmark(x), phase="random")
    return trace
