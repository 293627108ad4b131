"""Q-value guided multi-agent path finding on 4-connected grids."""
from .gridworld import (
    Action,
    Conflict,
    ConflictKind,
    GridMap,
    Instance,
    WorldState,
    detect_conflicts,
    generate_corridor_instance,
    generate_instance,
    observe,
    step,
)
from .pathfinding import AStarKind, astar, astar_tau, bfs_distance_field, heuristic_channels, transform_map
from .qpolicy import DistanceQProvider, DuelingHead, LearnerConfig, TabularQProvider, dueling_q, tabular_train
from .inference import StepContext, advanced_escape, is_deadlocked, prioritized_resolution, solver_step
from .ensemble import BASELINE, SolverConfig, Solution, default_configs, metrics, run_ensemble, run_solver

__version__ = "0.1.0"
