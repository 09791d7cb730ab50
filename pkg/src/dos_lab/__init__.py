"""Distributed opportunistic scheduling with one- and two-level channel probing."""

from .config import Fixed, Optimized, SystemParams, derive
from .errors import ContractError, DosLabError, ParameterError, RegularityError, SolverError
from .feedback_solver import FeedbackSolution, solve_R1_hat, solve_two_level_feedback
from .ost_solver import TwoLevelSolution, solve_one_level, solve_two_level, theta_lower_bound

__all__ = [
    "ContractError", "DosLabError", "FeedbackSolution", "Fixed", "Optimized", "ParameterError",
    "RegularityError", "SolverError", "SystemParams", "TwoLevelSolution", "derive", "solve_R1_hat",
    "solve_one_level", "solve_two_level", "solve_two_level_feedback", "theta_lower_bound",
]
