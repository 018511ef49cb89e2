"""Siting shiftable loads to cut power-system carbon emissions.

The package couples per-timestep DC dispatch QPs with a Monte Carlo tree search
over an iterative priority tree of candidate bus sets.
"""

from __future__ import annotations

from shiftsite.dispatch import (
    Baseline,
    CostCaps,
    DispatchResult,
    PlanEvaluation,
    compute_cost_caps,
    evaluate_plan,
    run_baseline,
    solve_dispatch_qp,
    solve_opf,
)
from shiftsite.grid import Network, build_network, bundled_network, grid_matrices, load_network
from shiftsite.ipt import Budget, LocationVector, children, contains, enumerate_leaves
from shiftsite.mcts import SearchConfig, SearchOutcome, backpropagate, search, ucb
from shiftsite.oracle import OracleReport, enumerate_optimal, solve_monolithic
from shiftsite.scenario import Scenario, SynthParams, load_scenario, make_scenario, synth_scenario

__version__ = "0.1.0"

__all__ = [
    "Baseline",
    "Budget",
    "CostCaps",
    "DispatchResult",
    "LocationVector",
    "Network",
    "OracleReport",
    "PlanEvaluation",
    "Scenario",
    "SearchConfig",
    "SearchOutcome",
    "SynthParams",
    "backpropagate",
    "build_network",
    "bundled_network",
    "children",
    "compute_cost_caps",
    "contains",
    "enumerate_leaves",
    "enumerate_optimal",
    "evaluate_plan",
    "grid_matrices",
    "load_network",
    "load_scenario",
    "make_scenario",
    "run_baseline",
    "search",
    "solve_dispatch_qp",
    "solve_monolithic",
    "solve_opf",
    "synth_scenario",
    "ucb",
]
