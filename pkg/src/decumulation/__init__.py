"""Optimal investment and consumption in decumulation with a final-annuity guarantee."""

from .analytics import ScenarioSummary, histogram, percentiles, present_value, summarize
from .domain import MarketParams, PlanParams, ProblemSpec, reference_problem
from .mortality import GompertzMakeham, annuity_value
from .simulator import PathConfig, simulate_ensemble, simulate_path
from .solver import Grid, GridSolution, SolverConfig, solve

__all__ = [
    "GompertzMakeham", "annuity_value",
    "MarketParams", "PlanParams", "ProblemSpec", "reference_problem",
    "Grid", "GridSolution", "SolverConfig", "solve",
    "PathConfig", "simulate_ensemble", "simulate_path",
    "ScenarioSummary", "summarize", "present_value", "percentiles", "histogram",
]
