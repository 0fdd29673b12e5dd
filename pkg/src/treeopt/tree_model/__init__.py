"""Gradient-boosted tree ensembles: training, geometry and bounds."""

from .ensemble import Tree, TreeEnsemble, predict, predict_many
from .grid import (
    Box,
    IntervalGrid,
    LeafTable,
    build_interval_grid,
    min_prediction_bound,
    partition_refine_bound,
    reachable_leaves,
)
from .io import ModelFormatError, UnsupportedVersionError, load_model, save_model
from .training import GBRTParams, train

__all__ = [
    "Box",
    "GBRTParams",
    "IntervalGrid",
    "LeafTable",
    "ModelFormatError",
    "Tree",
    "TreeEnsemble",
    "UnsupportedVersionError",
    "build_interval_grid",
    "load_model",
    "min_prediction_bound",
    "partition_refine_bound",
    "predict",
    "predict_many",
    "reachable_leaves",
    "save_model",
    "train",
]
