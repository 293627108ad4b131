"""Stay-at-target grid world: maps, instances, conflicts, rewards, observations."""
from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

Position = tuple[int, int]


class Action(enum.IntEnum):
    # global ordering shared by every module and every Q row
    STAY = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4


ACTIONS: tuple[Action, ...] = tuple(Action)
NUM_ACTIONS = len(ACTIONS)
DELTAS: dict[int, Position] = {
    Action.STAY: (0, 0),
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}
# index-aligned with Action for hot loops
_DR = (0, -1, 1, 0, 0)
_DC = (0, 0, 0, -1, 1)

REWARD_MOVE = -0.075
REWARD_STAY_ON_GOAL = 0.0
REWARD_COLLISION = -0.5
REWARD_REACH_GOAL = 3.0


class GridError(ValueError):
    pass


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GridMap:
    """Rectangular occupancy grid, 1 marks an obstacle and 0 a free cell."""

    cells: np.ndarray
    height: int = field(init=False, repr=False)
    width: int = field(init=False, repr=False)
    rows: list = field(init=False, repr=False)
    _hash: int = field(init=False, repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise GridError(f"grid must be a non-empty 2-D array, got shape {cells.shape}")
        if not ((cells == 0) | (cells == 1)).all():
            raise GridError("grid cells must be 0 (free) or 1 (obstacle)")
        cells = cells.astype(np.uint8, copy=True)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "height", cells.shape[0])
        object.__setattr__(self, "width", cells.shape[1])
        # nested lists are much faster than numpy for scalar lookups
        object.__setattr__(self, "rows", cells.tolist())
        # crc32 rather than hash(bytes): stays equal across processes
        object.__setattr__(self, "_hash", hash((cells.shape, zlib.crc32(cells.tobytes()))))

    @classmethod
    def empty(cls, height: int, width: int) -> "GridMap":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def from_rows(cls, rows: Sequence[str], obstacle: str = "@#") -> "GridMap":
        """Build a map from text rows where any char in ``obstacle`` is blocked."""
        return cls(np.array([[1 if ch in obstacle else 0 for ch in row] for row in rows], dtype=np.uint8))

    def in_bounds(self, p: Position) -> bool:
        return 0 <= p[0] < self.height and 0 <= p[1] < self.width

    def is_free(self, p: Position) -> bool:
        r, c = p
        return 0 <= r < self.height and 0 <= c < self.width and self.rows[r][c] == 0

    def free_cells(self) -> list[Position]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(self.cells == 0))]

    def with_obstacles(self, cells: Iterable[Position]) -> "GridMap":
        arr = self.cells.copy()
        for r, c in cells:
            if 0 <= r < self.height and 0 <= c < self.width:
                arr[r, c] = 1
        return GridMap(arr)

    def to_text(self) -> list[str]:
        return ["".join("@" if v else "." for v in row) for row in self.rows]

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        if self is other:
            return True
        return self._hash == other._hash and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"GridMap({self.height}x{self.width}, obstacles={int(self.cells.sum())})"


def apply_action(p: Position, a: int) -> Position:
    """Displace ``p`` by action ``a``; the result may lie off the map."""
    return (p[0] + _DR[a], p[1] + _DC[a])


def action_between(src: Position, dst: Position) -> Action:
    delta = (dst[0] - src[0], dst[1] - src[1])
    for a, d in DELTAS.items():
        if d == delta:
            return Action(a)
    raise ValueError(f"{src} -> {dst} is not a single grid move")


@dataclass(frozen=True, eq=False)
class Instance:
    grid: GridMap
    starts: tuple[Position, ...]
    goals: tuple[Position, ...]
    max_steps: int
    name: str = ""

    def __post_init__(self):
        starts = tuple((int(r), int(c)) for r, c in self.starts)
        goals = tuple((int(r), int(c)) for r, c in self.goals)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "goals", goals)
        if len(starts) != len(goals):
            raise GridError(f"{len(starts)} starts but {len(goals)} goals")
        if not starts:
            raise GridError("instance needs at least one agent")
        if self.max_steps < 1:
            raise GridError("max_steps must be >= 1")
        for i, (s, g) in enumerate(zip(starts, goals)):
            if not self.grid.is_free(s):
                raise GridError(f"agent {i}: start {s} is not a free cell")
            if not self.grid.is_free(g):
                raise GridError(f"agent {i}: goal {g} is not a free cell")
        if len(set(starts) | set(goals)) != 2 * len(starts):
            raise GridError("starts and goals must be 2m pairwise distinct cells")

    @property
    def num_agents(self) -> int:
        return len(self.starts)

    @cached_property
    def goal_fields(self) -> tuple[np.ndarray, ...]:
        """Per-agent BFS distance fields to each goal on the static map."""
        from .pathfinding import bfs_distance_field

        return tuple(bfs_distance_field(self.grid, g) for g in self.goals)

    @cached_property
    def goal_distances(self) -> tuple[list[list[float]], ...]:
        """``goal_fields`` as nested lists for fast scalar access."""
        return tuple(f.tolist() for f in self.goal_fields)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "height": self.grid.height,
            "width": self.grid.width,
            "map": self.grid.to_text(),
            "starts": [list(p) for p in self.starts],
            "goals": [list(p) for p in self.goals],
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        grid = GridMap.from_rows(d["map"])
        if grid.height != d.get("height", grid.height) or grid.width != d.get("width", grid.width):
            raise GridError("map rows do not match the declared dimensions")
        return cls(
            grid=grid,
            starts=tuple(tuple(p) for p in d["starts"]),
            goals=tuple(tuple(p) for p in d["goals"]),
            max_steps=int(d["max_steps"]),
            name=d.get("name", ""),
        )


HISTORY_LEN = 5


@dataclass(frozen=True)
class WorldState:
    instance: Instance
    positions: tuple[Position, ...]
    timestep: int = 0
    # per agent, oldest first, at most HISTORY_LEN entries ending with the current cell
    history: tuple[tuple[Position, ...], ...] = ()

    @classmethod
    def initial(cls, instance: Instance) -> "WorldState":
        return cls(instance, instance.starts, 0, tuple((s,) for s in instance.starts))

    @property
    def num_agents(self) -> int:
        return len(self.positions)

    def on_goal(self, i: int) -> bool:
        return self.positions[i] == self.instance.goals[i]

    @property
    def all_on_goal(self) -> bool:
        return all(p == g for p, g in zip(self.positions, self.instance.goals))

    @property
    def done(self) -> bool:
        return self.all_on_goal or self.timestep >= self.instance.max_steps


class ConflictKind(enum.Enum):
    VERTEX = "vertex"
    EDGE = "edge"
    OBSTACLE = "obstacle"
    OUT_OF_BOUND = "out_of_bound"


@dataclass(frozen=True)
class Conflict:
    kind: ConflictKind
    agents: tuple[int, ...]
    location: Position | tuple[Position, Position]


def detect_conflicts(prev: Sequence[Position], proposed: Sequence[Position], grid: GridMap) -> list[Conflict]:
    """All conflicts of a joint move.

    Ordering is deterministic: per-agent static conflicts by agent index,
    then vertex conflicts by lowest agent index, then edge conflicts by pair.
    """
    if len(prev) != len(proposed):
        raise ValueError(f"length mismatch: {len(prev)} previous vs {len(proposed)} proposed positions")
    h, w = grid.height, grid.width
    rows = grid.rows
    out: list[Conflict] = []
    occupants: dict[Position, list[int]] = {}
    for i, q in enumerate(proposed):
        r, c = q
        if not (0 <= r < h and 0 <= c < w):
            out.append(Conflict(ConflictKind.OUT_OF_BOUND, (i,), q))
        elif rows[r][c]:
            out.append(Conflict(ConflictKind.OBSTACLE, (i,), q))
        occupants.setdefault(q, []).append(i)
    for cell, idx in occupants.items():
        if len(idx) > 1:
            out.append(Conflict(ConflictKind.VERTEX, tuple(idx), cell))
    where = {p: j for j, p in enumerate(prev)}
    edges = []
    for i, q in enumerate(proposed):
        j = where.get(q)
        if j is not None and j > i and proposed[j] == prev[i]:
            edges.append(Conflict(ConflictKind.EDGE, (i, j), (prev[i], q)))
    # vertex conflicts in order of first agent; dict order already gives that
    static = [c for c in out if c.kind in (ConflictKind.OUT_OF_BOUND, ConflictKind.OBSTACLE)]
    vertex = [c for c in out if c.kind is ConflictKind.VERTEX]
    vertex.sort(key=lambda c: c.agents[0])
    return static + vertex + edges


def conflicting_agents(conflicts: Iterable[Conflict]) -> set[int]:
    return {i for c in conflicts for i in c.agents}


def freeze_conflicts(
    prev: Sequence[Position], proposed: Sequence[Position], grid: GridMap
) -> tuple[list[Position], set[int]]:
    """Hold every conflicting agent in place, repeated until the move is valid.

    Returns the resulting positions and the set of frozen agents.
    """
    current = list(proposed)
    frozen: set[int] = set()
    while True:
        hit = conflicting_agents(detect_conflicts(prev, current, grid))
        hit = {i for i in hit if current[i] != prev[i]}
        if not hit:
            return current, frozen
        for i in hit:
            current[i] = prev[i]
        frozen |= hit


def reward_of(moved: bool, on_goal_after: bool, collided: bool, reached_goal_now: bool) -> float:
    if collided:
        return REWARD_COLLISION
    if reached_goal_now:
        return REWARD_REACH_GOAL
    if on_goal_after and not moved:
        return REWARD_STAY_ON_GOAL
    return REWARD_MOVE


def step(state: WorldState, joint: Sequence[int]) -> tuple[WorldState, list[float], bool]:
    """Advance every agent simultaneously.

    Conflicting agents are frozen at their previous cell and receive the
    collision reward; an agent that chose Stay is never counted as colliding.
    """
    if state.done:
        raise EpisodeFinished(f"episode already finished at t={state.timestep}")
    m = state.num_agents
    if len(joint) != m:
        raise ValueError(f"expected {m} actions, got {len(joint)}")
    prev = state.positions
    proposed = [apply_action(p, a) for p, a in zip(prev, joint)]
    new_pos, frozen = freeze_conflicts(prev, proposed, state.instance.grid)
    goals = state.instance.goals
    rewards = []
    for i in range(m):
        was_on = prev[i] == goals[i]
        now_on = new_pos[i] == goals[i]
        collided = i in frozen
        moved = new_pos[i] != prev[i]
        rewards.append(reward_of(moved, now_on, collided, now_on and not was_on and not collided))
    history = tuple((h + (p,))[-HISTORY_LEN:] for h, p in zip(state.history, new_pos))
    nxt = WorldState(state.instance, tuple(new_pos), state.timestep + 1, history)
    return nxt, rewards, nxt.done


def _components(cells: np.ndarray) -> np.ndarray:
    labels, _ = ndimage.label(cells == 0)
    return labels


def _place_agents(
    grid: GridMap, m: int, rng: np.random.Generator
) -> tuple[list[Position], list[Position]] | None:
    labels = _components(grid.cells)
    free = grid.free_cells()
    if len(free) < 2 * m:
        return None
    used: set[Position] = set()
    starts, goals = [], []
    for _ in range(m):
        cand = [p for p in free if p not in used]
        # a start is only usable if its component still has another unused cell
        order = rng.permutation(len(cand))
        placed = False
        for k in order:
            s = cand[int(k)]
            mates = [p for p in cand if p != s and labels[p] == labels[s]]
            if mates:
                g = mates[int(rng.integers(len(mates)))]
                starts.append(s)
                goals.append(g)
                used.update((s, g))
                placed = True
                break
        if not placed:
            return None
    return starts, goals


def generate_instance(
    width: int,
    height: int,
    density: float,
    m: int,
    seed: int | None = None,
    max_steps: int = 256,
    *,
    max_attempts: int = 100,
    name: str = "",
) -> Instance:
    """Random map with i.i.d. obstacles and m connected start/goal pairs."""
    if not 0.0 <= density < 1.0:
        raise GridError(f"density must lie in [0, 1), got {density}")
    if m < 1:
        raise GridError("need at least one agent")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        cells = (rng.random((height, width)) < density).astype(np.uint8)
        grid = GridMap(cells)
        placed = _place_agents(grid, m, rng)
        if placed is not None:
            starts, goals = placed
            return Instance(grid, tuple(starts), tuple(goals), max_steps, name=name)
    raise GridError(
        f"could not place {m} connected agent pairs on a {height}x{width} map at density {density} "
        f"after {max_attempts} attempts"
    )


def warehouse_grid(width: int, height: int, rng: np.random.Generator, shelf: int = 4) -> GridMap:
    """Shelf blocks separated by one-cell aisles, with a free outer ring.

    Shelf lengths are jittered per block so different seeds give different maps.
    """
    cells = np.zeros((height, width), dtype=np.uint8)
    r = 2
    while r < height - 2:
        c = 2
        while c < width - 2:
            length = int(rng.integers(max(1, shelf - 1), shelf + 2))
            end = min(c + length, width - 2)
            cells[r, c:end] = 1
            c = end + 1 + int(rng.integers(0, 2))
        r += 2
    return GridMap(cells)


def generate_corridor_instance(
    width: int,
    height: int,
    m: int,
    seed: int | None = None,
    max_steps: int = 256,
    *,
    max_attempts: int = 100,
    name: str = "",
) -> Instance:
    """Warehouse-style corridor map with randomly placed agents."""
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        grid = warehouse_grid(width, height, rng)
        placed = _place_agents(grid, m, rng)
        if placed is not None:
            starts, goals = placed
            return Instance(grid, tuple(starts), tuple(goals), max_steps, name=name)
    raise GridError(f"could not place {m} agents on a {height}x{width} corridor map")


def observe(state: WorldState, agent: int, fov: int = 9) -> np.ndarray:
    """Six binary FOV channels: agents, obstacles, then heuristic Up/Down/Left/Right."""
    from .pathfinding import heuristic_channels

    if fov % 2 == 0 or fov < 1:
        raise ValueError(f"fov must be a positive odd number, got {fov}")
    if not 0 <= agent < state.num_agents:
        raise IndexError(f"agent {agent} out of range")
    grid = state.instance.grid
    half = fov // 2
    cr, cc = state.positions[agent]
    obs = np.zeros((6, fov, fov), dtype=np.uint8)
    padded = np.pad(grid.cells, half, constant_values=1)
    obs[1] = padded[cr : cr + fov, cc : cc + fov]
    for r, c in state.positions:
        dr, dc = r - cr + half, c - cc + half
        if 0 <= dr < fov and 0 <= dc < fov:
            obs[0, dr, dc] = 1
    obs[2:] = heuristic_channels(state.instance.goal_fields[agent], (cr, cc), fov)
    return obs
