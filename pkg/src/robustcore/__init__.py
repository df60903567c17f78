"""Robust TU coalitional games with distributed payoff allocation and bargaining."""

from .game import (Coalition, RobustGame, ValueFunction, core_nonempty, grand_value_fixed_upper,
                   in_bounding_set, in_core, three_firm_game)
from .geometry import OperatorSpec, PolyhedralSet, bounding_polyhedron, core_polyhedron, project
from .network import NetworkSchedule, WeightedGraph, metropolis_weights, mix, q_connected, validate
from .dynamics import (AllocationConfig, BargainConfig, Trajectory, distance_to_target, run_allocation,
                       run_bargaining)
from .lp import LinearProgram, LpOutcome, solve

__version__ = "0.1.0"

__all__ = [
    "Coalition", "RobustGame", "ValueFunction", "core_nonempty", "grand_value_fixed_upper",
    "in_bounding_set", "in_core", "three_firm_game",
    "OperatorSpec", "PolyhedralSet", "bounding_polyhedron", "core_polyhedron", "project",
    "NetworkSchedule", "WeightedGraph", "metropolis_weights", "mix", "q_connected", "validate",
    "AllocationConfig", "BargainConfig", "Trajectory", "distance_to_target", "run_allocation",
    "run_bargaining",
    "LinearProgram", "LpOutcome", "solve",
]
