"""Acquisition problems and their branch-and-bound solver."""

from .bnb import BnBNode, SolveResult, SolverConfig, make_node, node_lower_bound, select_branch, solve, warm_start
from .problem import AcquisitionProblem, Mode, build_problem, evaluate_acquisition, evaluate_many

__all__ = [
    "AcquisitionProblem",
    "BnBNode",
    "Mode",
    "SolveResult",
    "SolverConfig",
    "build_problem",
    "evaluate_acquisition",
    "evaluate_many",
    "make_node",
    "node_lower_bound",
    "select_branch",
    "solve",
    "warm_start",
]
