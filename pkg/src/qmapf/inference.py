"""Per-step decision pipeline: masking, expert guidance, conflict priorities, escape."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .gridworld import (
    NUM_ACTIONS,
    Action,
    ConflictKind,
    GridMap,
    Position,
    WorldState,
    apply_action,
    detect_conflicts,
    freeze_conflicts,
)
from .pathfinding import AStarKind, astar_tau
from .qpolicy import NEG_INF, QProvider, q_matrix

POS_INF = float("inf")


@dataclass(frozen=True)
class StepContext:
    state: WorldState
    q: np.ndarray | None = None
    tau: int = AStarKind.ON_GOAL_AGENTS
    rho: int = 3
    priority_resolution: bool = True
    escape_policy: bool = True
    hybrid_guidance: bool = True

    def __post_init__(self):
        AStarKind(self.tau)
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.q is not None and len(self.q) != self.state.num_agents:
            raise ValueError("q needs one row per agent")


def mask_q(
    q_row: np.ndarray, grid: GridMap, pos: Position, claimed: set[Position] | frozenset = frozenset()
) -> np.ndarray:
    """Set -inf for every action landing off-map, on an obstacle, or on a ``claimed`` cell."""
    out = np.array(q_row, dtype=float)
    for a in range(NUM_ACTIONS):
        land = apply_action(pos, a)
        if not grid.is_free(land) or land in claimed:
            out[a] = NEG_INF
    return out


def mask_static(q_row: np.ndarray, grid: GridMap, pos: Position) -> np.ndarray:
    # the agent's own cell is free on the static map, so Stay survives
    return mask_q(q_row, grid, pos)


def greedy(q_row: np.ndarray) -> int:
    """Argmax over finite entries, Stay when none is finite."""
    if not np.isfinite(q_row).any():
        return int(Action.STAY)
    return int(np.argmax(q_row))


def live_agents_nearby(state: WorldState, i: int, rho: int) -> bool:
    r, c = state.positions[i]
    goals = state.instance.goals
    for j, (p, g) in enumerate(zip(state.positions, goals)):
        if j != i and p != g and max(abs(p[0] - r), abs(p[1] - c)) <= rho:
            return True
    return False


def hybrid_select(ctx: StepContext, i: int) -> Action | None:
    """First A* action for an agent with no live agent in its (2rho+1) square."""
    state = ctx.state
    if live_agents_nearby(state, i, ctx.rho):
        return None
    path = astar_tau(
        state.positions[i], state.instance.goals[i], state.instance.grid, ctx.tau,
        state.positions, state.instance.goals, i,
    )
    if not path:
        return None
    return path[0]


def is_deadlocked(history: Sequence[Position]) -> bool:
    """Oscillation test on the last five positions (oldest first).

    True when v[t-1] == v[t-3] and v[t-2] == v[t-4]; shorter histories never trigger.
    """
    if len(history) < 5:
        return False
    h = history[-5:]
    return h[3] == h[1] and h[2] == h[0]


def _chosen_q(q: np.ndarray, actions: Sequence[int]) -> list[float]:
    return [float(q[i, a]) for i, a in enumerate(actions)]


def advanced_escape(
    state: WorldState,
    q: np.ndarray,
    tau: int,
    init: Sequence[int] | None = None,
    priority: Sequence[float] | None = None,
) -> tuple[list[int], set[int]]:
    """Re-decide active oscillating agents in descending-Q order on a claiming map.

    ``init`` defaults to the argmax of each row and ``priority`` to the Q value
    of the initial action. Every processed agent claims its landing cell as an
    obstacle for the agents after it. Returns the actions and the set of
    re-decided agents.
    """
    m = state.num_agents
    grid = state.instance.grid
    goals = state.instance.goals
    actions = [greedy(q[i]) for i in range(m)] if init is None else [int(a) for a in init]
    prio = _chosen_q(q, actions) if priority is None else list(priority)
    # stable sort, so equal Q keeps the lower index first
    order = sorted(range(m), key=lambda i: -prio[i])
    # claimed landing cells act as obstacles of the working map copy
    claimed: set[Position] = set()
    changed: set[int] = set()
    for i in order:
        pos = state.positions[i]
        if pos != goals[i] and is_deadlocked(state.history[i]):
            path = astar_tau(pos, goals[i], grid, tau, state.positions, goals, i, claimed)
            if path:
                actions[i] = int(path[0])
            else:
                actions[i] = greedy(mask_q(q[i], grid, pos, claimed))
            changed.add(i)
        land = apply_action(pos, actions[i])
        if grid.in_bounds(land):
            claimed.add(land)
    return actions, changed


def prioritized_resolution(
    state: WorldState,
    q: np.ndarray,
    proposed: Sequence[int],
    priority: Sequence[float] | None = None,
    return_rounds: bool = False,
):
    """Resolve conflicts among ``proposed`` by Q priority.

    In every conflict the agent with the highest priority keeps its action;
    the others mask their current action and re-choose among the actions that
    do not run into an agent that has already won. An agent standing still
    always wins (it cannot be displaced), a previous winner outranks agents
    that never won, and ties go to the lower index. An agent left without a
    usable action stays put.
    """
    grid = state.instance.grid
    prev = state.positions
    m = len(prev)
    rows = np.array(q, dtype=float, copy=True)
    actions = [int(a) for a in proposed]
    prio = _chosen_q(rows, actions) if priority is None else [float(p) for p in priority]
    locked = [False] * m
    rounds: list[list] = []
    while True:
        targets = [apply_action(p, a) for p, a in zip(prev, actions)]
        conflicts = detect_conflicts(prev, targets, grid)
        if not conflicts:
            break
        rounds.append(conflicts)
        losers: set[int] = set()
        winners: set[int] = set()
        for c in conflicts:
            if c.kind in (ConflictKind.OBSTACLE, ConflictKind.OUT_OF_BOUND):
                losers.add(c.agents[0])
                continue
            best = max(
                c.agents,
                key=lambda i: (actions[i] == Action.STAY, locked[i], prio[i], -i),
            )
            winners.add(best)
            losers.update(i for i in c.agents if i != best)
        for i in winners - losers:
            locked[i] = True
        for i in losers:
            locked[i] = False
        taken = {targets[j] for j in range(m) if locked[j]}
        for i in sorted(losers):
            rows[i, actions[i]] = NEG_INF
            actions[i] = _rechoose(rows[i], prev, i, targets, locked, taken)
            prio[i] = float(rows[i, actions[i]])
    if return_rounds:
        return actions, rounds
    return actions


def _rechoose(row, prev, i, targets, locked, taken) -> int:
    """Best remaining action that neither lands on nor swaps with a winner."""
    pos = prev[i]
    for a in sorted(range(NUM_ACTIONS), key=lambda a: (-row[a], a)):
        if not np.isfinite(row[a]):
            break
        land = apply_action(pos, a)
        if land in taken:
            continue
        if any(locked[j] and prev[j] == land and targets[j] == pos for j in range(len(prev)) if j != i):
            continue
        return a
    return int(Action.STAY)


def solver_step(ctx: StepContext, provider: QProvider) -> list[int]:
    """One conflict-free joint action.

    Order: provider Q, static masking, greedy proposals, expert guidance,
    escape overrides, then prioritized resolution (or freezing when off).
    """
    state = ctx.state
    grid = state.instance.grid
    q = q_matrix(provider, state) if ctx.q is None else np.asarray(ctx.q, dtype=float)
    q = np.array([mask_static(q[i], grid, p) for i, p in enumerate(state.positions)])
    ctx = replace(ctx, q=q)
    actions = [greedy(row) for row in q]
    prio = _chosen_q(q, actions)
    if ctx.hybrid_guidance:
        for i in range(state.num_agents):
            a = hybrid_select(ctx, i)
            if a is not None:
                actions[i] = int(a)
                prio[i] = POS_INF
    if ctx.escape_policy:
        actions, changed = advanced_escape(state, q, ctx.tau, actions, prio)
        for i in changed:
            prio[i] = float(q[i, actions[i]])
    if ctx.priority_resolution:
        return prioritized_resolution(state, q, actions, prio)
    targets = [apply_action(p, a) for p, a in zip(state.positions, actions)]
    final, _ = freeze_conflicts(state.positions, targets, grid)
    return [int(Action.STAY) if f == p else a for f, p, a in zip(final, state.positions, actions)]
