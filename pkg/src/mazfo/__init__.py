"""Distributed zeroth-order primal-dual optimisation under coupled constraints.

Agents hold private cost and constraint functions they can only evaluate,
gossip scalar cost differences over a graph, agree on a shared multiplier by
averaging consensus, and step on local projected updates.
"""

from .algorithm import ParamSchedule, TheoremConstants, TrialResult, compute_theorem_params, run
from .errors import MazfoError
from .problem import (FeasibleSet, ProblemConstants, ProblemInstance, QuadraticProblem,
                      generate_quadratic, load_instance, save_instance, solve_reference)
from .topology import NetworkTopology, build_topology

__all__ = [
    "FeasibleSet", "MazfoError", "NetworkTopology", "ParamSchedule", "ProblemConstants",
    "ProblemInstance", "QuadraticProblem", "TheoremConstants", "TrialResult", "build_topology",
    "compute_theorem_params", "generate_quadratic", "load_instance", "run", "save_instance",
    "solve_reference",
]

__version__ = "0.1.0"
