"""Sustainable exploitation equilibria of exploiter/exploitee games on finite grids."""

from .game_core import (
    ConvergenceError,
    GameModel,
    StrategyProfile,
    ValidationReport,
    ValuePair,
    ViabilitySet,
    evaluate_policies,
    induced_kernel,
    simulate_trajectory,
    toy3,
    validate_model,
)
from .mse_solver import (
    BudgetExceededError,
    DeviationReport,
    EquilibriumSet,
    enumerate_stationary_mpe,
    follower_best_response,
    one_shot_deviation_check,
    solve_mse,
)

__version__ = "0.1.0"
