"""Bayesian optimization over gradient-boosted tree surrogates."""

__version__ = "0.1.0"
