"""Community-storage energy trading: Stackelberg pricing and a start-time participation game."""

__version__ = "0.1.0"

from .exceptions import CesTradeError, ConvergenceError, InfeasibleError, ScenarioError
from .scenario import (
    PriceParams,
    Scenario,
    TimeGrid,
    UserProfile,
    baseline_solve,
    calibrate_prices,
    default_scenario,
    fixture_s1,
    hetero3_scenario,
    load_scenario,
)
from .stackelberg import CesStrategy, StackelbergSolution, solve_leader, solve_stackelberg
from .storage import BatteryParams
from .participation import build_cost_table, run_dynamics

__all__ = [
    "BatteryParams",
    "CesStrategy",
    "CesTradeError",
    "ConvergenceError",
    "InfeasibleError",
    "PriceParams",
    "Scenario",
    "ScenarioError",
    "StackelbergSolution",
    "TimeGrid",
    "UserProfile",
    "baseline_solve",
    "build_cost_table",
    "calibrate_prices",
    "default_scenario",
    "fixture_s1",
    "hetero3_scenario",
    "load_scenario",
    "run_dynamics",
    "solve_leader",
    "solve_stackelberg",
]
