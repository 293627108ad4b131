"""BFS distance fields, the three A* map transforms and heuristic channels."""
from __future__ import annotations

import enum
import heapq
from collections import deque
from functools import lru_cache
from typing import Sequence

import numpy as np

from .gridworld import Action, GridMap, Position

INF = float("inf")

# expansion order for A*; must stay Up, Down, Left, Right
_EXPAND = ((Action.UP, -1, 0), (Action.DOWN, 1, 0), (Action.LEFT, 0, -1), (Action.RIGHT, 0, 1))


class AStarKind(enum.IntEnum):
    STATIC = 0  # plain map
    ALL_AGENTS = 1  # every other agent is an obstacle
    ON_GOAL_AGENTS = 2  # only agents already parked on their goal are obstacles


def bfs_distance_field(grid: GridMap, goal: Position) -> np.ndarray:
    """4-connected shortest distances to ``goal``; ``inf`` where unreachable."""
    if not grid.is_free(goal):
        raise ValueError(f"goal {goal} is not a free cell")
    h, w = grid.height, grid.width
    rows = grid.rows
    dist = [[INF] * w for _ in range(h)]
    dist[goal[0]][goal[1]] = 0
    queue = deque([goal])
    while queue:
        r, c = queue.popleft()
        nd = dist[r][c] + 1
        for _, dr, dc in _EXPAND:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not rows[nr][nc] and dist[nr][nc] == INF:
                dist[nr][nc] = nd
                queue.append((nr, nc))
    return np.array(dist, dtype=float)


def transform_map(
    grid: GridMap,
    tau: int,
    agent: int,
    positions: Sequence[Position],
    goals: Sequence[Position],
) -> GridMap:
    """Map seen by ``agent``'s A* of the given kind. Never unblocks a cell."""
    tau = AStarKind(tau)
    if tau is AStarKind.STATIC:
        return grid
    return grid.with_obstacles(_extra_blocked(tau, agent, positions, goals))


def _extra_blocked(tau: AStarKind, agent: int, positions, goals) -> set[Position]:
    if tau is AStarKind.STATIC:
        return set()
    own = positions[agent]
    if tau is AStarKind.ALL_AGENTS:
        cells = {p for j, p in enumerate(positions) if j != agent}
    else:
        cells = {p for j, (p, g) in enumerate(zip(positions, goals)) if j != agent and p == g}
    cells.discard(own)
    return cells


def astar(
    grid: GridMap,
    start: Position,
    goal: Position,
    blocked: set[Position] | frozenset[Position] = frozenset(),
) -> list[Action] | None:
    """Shortest action sequence from ``start`` to ``goal`` or None.

    Manhattan heuristic; equal f-scores pop in (row, col) order and neighbours
    are generated Up, Down, Left, Right. ``blocked`` adds obstacles on top of
    ``grid``. The start cell is always enterable as the agent already stands there.
    """
    path = _astar_cached(grid, tuple(start), tuple(goal), frozenset(blocked))
    return None if path is None else list(path)


@lru_cache(maxsize=65536)
def _astar_cached(grid, start, goal, blocked):
    path = _astar(grid, start, goal, blocked)
    return None if path is None else tuple(path)


def _astar(grid: GridMap, start: Position, goal: Position, blocked) -> list[Action] | None:
    if start == goal:
        return []
    h, w = grid.height, grid.width
    rows = grid.rows
    gr, gc = goal
    if not (0 <= gr < h and 0 <= gc < w) or rows[gr][gc] or goal in blocked:
        return None
    g_score = {start: 0}
    parent: dict[Position, tuple[Position, Action]] = {}
    closed = set()
    sr, sc = start
    heap = [(abs(sr - gr) + abs(sc - gc), sr, sc)]
    while heap:
        _, r, c = heapq.heappop(heap)
        node = (r, c)
        if node in closed:
            continue
        if node == goal:
            path = []
            while node != start:
                node, a = parent[node]
                path.append(a)
            path.reverse()
            return path
        closed.add(node)
        g = g_score[node] + 1
        for a, dr, dc in _EXPAND:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or rows[nr][nc]:
                continue
            nxt = (nr, nc)
            if nxt in blocked or nxt in closed:
                continue
            if g < g_score.get(nxt, INF):
                g_score[nxt] = g
                parent[nxt] = (node, a)
                heapq.heappush(heap, (g + abs(nr - gr) + abs(nc - gc), nr, nc))
    return None


def astar_tau(
    start: Position,
    goal: Position,
    grid: GridMap,
    tau: int,
    positions: Sequence[Position],
    goals: Sequence[Position],
    agent: int | None = None,
    claimed: set[Position] | frozenset[Position] = frozenset(),
) -> list[Action] | None:
    """A* on the map transformed for kind ``tau`` from ``agent``'s point of view.

    ``agent`` defaults to the agent standing on ``start``; ``claimed`` cells
    are extra obstacles.
    """
    if agent is None:
        agent = list(positions).index(start)
    blocked = _extra_blocked(AStarKind(tau), agent, positions, goals)
    if claimed:
        blocked = blocked | set(claimed)
    return astar(grid, start, goal, blocked)


def heuristic_channels(field: np.ndarray, center: Position, fov: int) -> np.ndarray:
    """Four (fov x fov) maps, one per direction Up/Down/Left/Right.

    A cell is 1 when stepping in that direction strictly lowers the
    distance-to-goal. Off-map and unreachable cells stay 0.
    """
    if fov % 2 == 0 or fov < 1:
        raise ValueError(f"fov must be a positive odd number, got {fov}")
    half = fov // 2
    h, w = field.shape
    # pad by one extra ring so neighbours of border FOV cells are addressable
    pad = half + 1
    big = np.full((h + 2 * pad, w + 2 * pad), np.inf)
    big[pad : pad + h, pad : pad + w] = field
    r0, c0 = center[0] + pad - half, center[1] + pad - half
    win = big[r0 : r0 + fov, c0 : c0 + fov]
    finite = np.isfinite(win)
    out = np.zeros((4, fov, fov), dtype=np.uint8)
    for k, (_, dr, dc) in enumerate(_EXPAND):
        nb = big[r0 + dr : r0 + dr + fov, c0 + dc : c0 + dc + fov]
        out[k] = finite & (nb < win)
    return out
