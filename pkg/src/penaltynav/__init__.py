"""Obstacle-avoiding NMPC with a quadratic penalty method and the PANOC solver."""

from .dynamics import VehicleModel, VehicleState, rk4_step, rollout
from .expr import ConstraintExpr, EvaluationError, ExpressionSyntaxError, parse_constraint
from .kernels import BACKEND
from .mission import MissionConfig, MissionLog, OccupancyGrid, Workspace, astar, extract_waypoints, rasterize, run_mission
from .objective import CostWeights, InputBox, ProblemSpec, eval_objective, eval_objective_gradient, max_obstacle_violation
from .obstacles import ObstacleSpec, apply_enlargement, eval_penalty_gradient, eval_psi, obstacle_from_text
from .panoc import PanocConfig, SolveReport, panoc_solve
from .penalty import PenaltyConfig, PenaltyOutcome, penalty_solve, shift_warm_start
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConstraintExpr",
    "CostWeights",
    "EvaluationError",
    "ExpressionSyntaxError",
    "InputBox",
    "MissionConfig",
    "MissionLog",
    "ObstacleSpec",
    "OccupancyGrid",
    "PanocConfig",
    "PenaltyConfig",
    "PenaltyOutcome",
    "ProblemSpec",
    "Scenario",
    "SolveReport",
    "VehicleModel",
    "VehicleState",
    "Workspace",
    "apply_enlargement",
    "astar",
    "eval_objective",
    "eval_objective_gradient",
    "eval_penalty_gradient",
    "eval_psi",
    "extract_waypoints",
    "load_scenario",
    "max_obstacle_violation",
    "obstacle_from_text",
    "panoc_solve",
    "parse_constraint",
    "penalty_solve",
    "rasterize",
    "rk4_step",
    "rollout",
    "run_mission",
    "shift_warm_start",
]
