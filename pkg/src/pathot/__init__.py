"""Optimal transport along minimal paths, with and without path interaction."""

from .core import (DiscreteMeasure, DiscretePath, InteractionParams, Potential, TimeGrid,
                   linear_path, make_grid)
from .endpoint import EndpointCostEval, endpoint_cost, endpoint_cost_matrix, grad_y_formula
from .errors import (ConvergenceError, DivergenceError, InfeasibleError, InvalidArgument,
                     NonMapLikeError, PathOTError, SingularityError, UnsupportedError)
from .interaction import (PathPlan, effective_cost_matrix, effective_potential, kkt_audit,
                          solve_problem_b, theta0_bound, total_energy)
from .minpath import BvpSolveReport, action_cost, solve_bvp
from .mkp import CostMatrix, Coupling, DualPotentials, solve_exact
from .potentials import GaussianWell, LinearPotential, TablePotential, ZeroPotential
from .transportmap import PathMap, extract_map

__all__ = [
    "BvpSolveReport", "ConvergenceError", "CostMatrix", "Coupling", "DiscreteMeasure",
    "DiscretePath", "DivergenceError", "DualPotentials", "EndpointCostEval", "GaussianWell",
    "InfeasibleError", "InteractionParams", "InvalidArgument", "LinearPotential",
    "NonMapLikeError", "PathMap", "PathOTError", "PathPlan", "Potential", "SingularityError",
    "TablePotential", "TimeGrid", "UnsupportedError", "ZeroPotential", "action_cost",
    "effective_cost_matrix", "effective_potential", "endpoint_cost", "endpoint_cost_matrix",
    "extract_map", "grad_y_formula", "kkt_audit", "linear_path", "make_grid", "solve_bvp",
    "solve_exact", "solve_problem_b", "theta0_bound", "total_energy",
]
