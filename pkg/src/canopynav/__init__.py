"""Lidar-based under-canopy flight stack with a desk-scale forest simulator.

The package bundles an occupancy voxel map, a path-consistent grid planner,
safe-flight-corridor generation, a jerk-input model-predictive controller on
top of a first-party ADMM QP solver, a procedural forest world, and a
benchmark harness that exercises the whole stack over a standardized mission
suite.
"""

from __future__ import annotations

from .mapping import NoFreeVoxel, VoxelMap
from .planning import GridPlanner, HeuristicParams, PlanOutcome, PlanStatus, SearchState
from .qp import QpResult, QpSettings, QpStatus, QuadProgram, solve_qp

__version__ = "0.1.0"

__all__ = [
    "GridPlanner",
    "HeuristicParams",
    "NoFreeVoxel",
    "PlanOutcome",
    "PlanStatus",
    "QpResult",
    "QpSettings",
    "QpStatus",
    "QuadProgram",
    "SearchState",
    "VoxelMap",
    "solve_qp",
    "__version__",
]
