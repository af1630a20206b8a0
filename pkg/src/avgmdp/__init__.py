"""Gain, bias and gaps of average-reward MDPs, the leveling transform,
invariant measures, regret lower bounds and the ECoE* learner."""

from .errors import AvgMdpError, SolverError, ValidationError
from .model import MdpModel, Policy, load_model, model_from_dict, model_to_dict, save_model
from .solver import OptimalSolution, solve_optimal

__version__ = "0.1.0"

__all__ = [
    "AvgMdpError",
    "MdpModel",
    "OptimalSolution",
    "Policy",
    "SolverError",
    "ValidationError",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "save_model",
    "solve_optimal",
]
