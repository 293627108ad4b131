"""Q values: dueling heads, n-step targets, providers and a tabular learner."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .gridworld import (
    NUM_ACTIONS,
    REWARD_COLLISION,
    REWARD_MOVE,
    REWARD_REACH_GOAL,
    REWARD_STAY_ON_GOAL,
    DELTAS,
    Action,
    GridMap,
    Position,
    WorldState,
    apply_action,
)

log = logging.getLogger(__name__)

NEG_INF = float("-inf")
PROVIDER_FORMAT = "qmapf.provider"
PROVIDER_VERSION = 1
_MOVES = tuple(DELTAS[a] for a in Action)


@dataclass
class DuelingHead:
    val: float
    adv: np.ndarray

    def __post_init__(self):
        self.adv = np.asarray(self.adv, dtype=float)


def dueling_q(head: DuelingHead) -> np.ndarray:
    return head.val + head.adv - head.adv.mean()


def n_step_return(rewards: Sequence[float], gamma: float, bootstrap: float) -> float:
    """Discounted sum of ``rewards`` plus gamma**n times ``bootstrap``."""
    total = 0.0
    discount = 1.0
    for r in rewards:
        total += discount * r
        discount *= gamma
    return total + discount * bootstrap


def td_loss(returns: Sequence[float], q_taken: Sequence[float]) -> float:
    if len(returns) == 0 or len(returns) != len(q_taken):
        raise ValueError("td_loss needs two equal-length, non-empty sequences")
    diff = np.asarray(returns, dtype=float) - np.asarray(q_taken, dtype=float)
    return float(np.mean(diff * diff))


def distance_q(state: WorldState, agent: int, fields: Sequence) -> np.ndarray:
    """Negative BFS distance of each landing cell; -inf where the move is impossible.

    ``fields`` holds one distance grid per agent (array or nested lists).
    """
    grid = state.instance.grid
    dist = fields[agent]
    r, c = state.positions[agent]
    row = [NEG_INF] * NUM_ACTIONS
    for a, (dr, dc) in enumerate(_MOVES):
        nr, nc = r + dr, c + dc
        if 0 <= nr < grid.height and 0 <= nc < grid.width and not grid.rows[nr][nc]:
            row[a] = -dist[nr][nc]
    return np.array(row)


@runtime_checkable
class QProvider(Protocol):
    """Anything that maps (state, agent) to a row of 5 action values."""

    def q_row(self, state: WorldState, agent: int) -> np.ndarray: ...


def q_matrix(provider: QProvider, state: WorldState) -> np.ndarray:
    return np.array([provider.q_row(state, i) for i in range(state.num_agents)], dtype=float)


class DistanceQProvider:
    """Training-free provider: Q = minus the static distance-to-goal after the move.

    Scale is shared across agents, so priority means "closer to goal wins".
    """

    kind = "distance"

    def q_row(self, state: WorldState, agent: int) -> np.ndarray:
        return distance_q(state, agent, state.instance.goal_distances)

    def to_dict(self) -> dict:
        return {"format": PROVIDER_FORMAT, "version": PROVIDER_VERSION, "kind": self.kind, "params": {}}


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    n: int = 1
    alpha: float = 0.2
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 20_000
    target_sync: int = 500
    steps: int = 200_000
    max_episode_steps: int = 100

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.alpha <= 0 or self.target_sync < 1 or self.steps < 1 or self.max_episode_steps < 1:
            raise ValueError("alpha, target_sync, steps and max_episode_steps must be positive")
        for eps in (self.eps_start, self.eps_end):
            if not 0 <= eps <= 1:
                raise ValueError("exploration rates must lie in [0, 1]")

    def epsilon(self, t: int) -> float:
        frac = min(1.0, t / max(1, self.eps_decay_steps))
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def single_agent_transition(grid: GridMap, goal: Position, s: Position, a: int) -> tuple[Position, float, bool]:
    """Single-agent dynamics under the grid-world rules.

    The goal is terminal: any action taken there ends the episode with its
    immediate reward, so Stay (reward 0) is the best action on the goal.
    """
    if s == goal:
        nxt = apply_action(s, a)
        if a == Action.STAY:
            return s, REWARD_STAY_ON_GOAL, True
        return s, (REWARD_MOVE if grid.is_free(nxt) else REWARD_COLLISION), True
    nxt = apply_action(s, a)
    if not grid.is_free(nxt):
        return s, REWARD_COLLISION, False
    if nxt == goal:
        return nxt, REWARD_REACH_GOAL, True
    return nxt, REWARD_MOVE, False


def value_iteration(grid: GridMap, goal: Position, gamma: float, tol: float = 1e-12) -> np.ndarray:
    """Optimal Q table (H, W, 5) of the single-agent MDP."""
    h, w = grid.height, grid.width
    q = np.zeros((h, w, NUM_ACTIONS))
    cells = grid.free_cells()
    model = {
        (s, a): single_agent_transition(grid, goal, s, a) for s in cells for a in range(NUM_ACTIONS)
    }
    while True:
        v = q.max(axis=2)
        new = np.zeros_like(q)
        for (s, a), (nxt, r, term) in model.items():
            new[s[0], s[1], a] = r + (0.0 if term else gamma * v[nxt])
        delta = float(np.abs(new - q).max())
        q = new
        if delta < tol:
            return q


@dataclass
class TabularQProvider:
    """Per-cell dueling heads learned for a fixed map and set of goals."""

    grid: GridMap
    goals: tuple[Position, ...]
    val: np.ndarray  # (G, H, W)
    adv: np.ndarray  # (G, H, W, 5)
    config: LearnerConfig = field(default_factory=LearnerConfig)
    seed: int | None = None
    truncated_episodes: int = 0

    kind = "tabular"

    def _goal_index(self, goal: Position) -> int:
        try:
            return self.goals.index(tuple(goal))
        except ValueError:
            raise ValueError(f"provider was not trained for goal {goal}") from None

    def table(self, goal: Position) -> np.ndarray:
        k = self._goal_index(goal)
        return self.val[k][..., None] + self.adv[k] - self.adv[k].mean(axis=-1, keepdims=True)

    def q_row(self, state: WorldState, agent: int) -> np.ndarray:
        if state.instance.grid != self.grid:
            raise ValueError("provider was trained on a different map")
        k = self._goal_index(state.instance.goals[agent])
        r, c = state.positions[agent]
        return dueling_q(DuelingHead(self.val[k, r, c], self.adv[k, r, c]))

    def greedy_path_length(self, start: Position, goal: Position, limit: int = 1000) -> int | None:
        q = self.table(goal)
        s, steps = start, 0
        while s != goal:
            if steps >= limit:
                return None
            s, _, _ = single_agent_transition(self.grid, goal, s, int(np.argmax(q[s])))
            steps += 1
        return steps

    def to_dict(self) -> dict:
        return {
            "format": PROVIDER_FORMAT,
            "version": PROVIDER_VERSION,
            "kind": self.kind,
            "params": {**asdict(self.config), "seed": self.seed, "truncated_episodes": self.truncated_episodes},
            "map": self.grid.to_text(),
            "goals": [list(g) for g in self.goals],
            "table": {"val": self.val.tolist(), "adv": self.adv.tolist()},
        }


def tabular_train(
    grid: GridMap,
    goals: Sequence[Position],
    cfg: LearnerConfig | None = None,
    seed: int | None = 0,
) -> TabularQProvider:
    """Double Q-learning over per-cell dueling heads with n-step targets.

    One table is kept per goal. Episodes start on a uniformly random free
    cell (the goal included) and are cut off after ``cfg.max_episode_steps``.
    The online table picks the bootstrap action, the target copy evaluates it.
    """
    cfg = cfg or LearnerConfig()
    if grid.height * grid.width > 100:
        raise ValueError("tabular learner is limited to maps of at most 100 cells")
    goals = tuple((int(r), int(c)) for r, c in goals)
    for g in goals:
        if not grid.is_free(g):
            raise ValueError(f"goal {g} is not free")
    rng = np.random.default_rng(seed)
    h, w = grid.height, grid.width
    val = np.zeros((len(goals), h, w))
    adv = np.zeros((len(goals), h, w, NUM_ACTIONS))
    t_val, t_adv = val.copy(), adv.copy()
    cells = grid.free_cells()
    truncated = 0

    def q_of(v, a, k, s):
        return v[k, s[0], s[1]] + a[k, s[0], s[1]] - a[k, s[0], s[1]].mean()

    def update(k, s, act, target):
        q = q_of(val, adv, k, s)
        err = target - q[act]
        # gradient step on 0.5 * err**2 through the dueling decomposition
        grad_adv = -np.full(NUM_ACTIONS, 1.0 / NUM_ACTIONS)
        grad_adv[act] += 1.0
        val[k, s[0], s[1]] += cfg.alpha * err
        adv[k, s[0], s[1]] += cfg.alpha * err * grad_adv

    t = 0
    while t < cfg.steps:
        k = int(rng.integers(len(goals)))
        goal = goals[k]
        s = cells[int(rng.integers(len(cells)))]
        trace: list[tuple[Position, int, float]] = []
        ep_steps = 0
        while True:
            eps = cfg.epsilon(t)
            if rng.random() < eps:
                act = int(rng.integers(NUM_ACTIONS))
            else:
                act = int(np.argmax(q_of(val, adv, k, s)))
            nxt, r, term = single_agent_transition(grid, goal, s, act)
            trace.append((s, act, r))
            t += 1
            ep_steps += 1
            if t % cfg.target_sync == 0:
                t_val[:], t_adv[:] = val, adv
            cut = not term and (ep_steps >= cfg.max_episode_steps or t >= cfg.steps)
            if len(trace) >= cfg.n or term or cut:
                # flush: every pending transition whose n-step window is complete
                while trace and (len(trace) >= cfg.n or term or cut):
                    if term:
                        boot = 0.0
                    else:
                        a_star = int(np.argmax(q_of(val, adv, k, nxt)))
                        boot = float(q_of(t_val, t_adv, k, nxt)[a_star])
                    s0, a0, _ = trace[0]
                    target = n_step_return([x[2] for x in trace], cfg.gamma, boot)
                    update(k, s0, a0, target)
                    trace.pop(0)
                    if not (term or cut):
                        break
            s = nxt
            if term or cut:
                if cut and ep_steps >= cfg.max_episode_steps:
                    truncated += 1
                break
    if truncated:
        log.info("tabular_train: %d episodes cut off at %d steps", truncated, cfg.max_episode_steps)
    return TabularQProvider(grid, goals, val, adv, cfg, seed, truncated)


def provider_from_dict(d: dict) -> QProvider:
    if d.get("format") != PROVIDER_FORMAT:
        raise ValueError(f"not a provider document (format={d.get('format')!r})")
    if d.get("version") != PROVIDER_VERSION:
        raise ValueError(f"unsupported provider version {d.get('version')!r}")
    kind = d.get("kind")
    if kind == "distance":
        return DistanceQProvider()
    if kind == "tabular":
        params = dict(d["params"])
        seed = params.pop("seed", None)
        truncated = params.pop("truncated_episodes", 0)
        return TabularQProvider(
            grid=GridMap.from_rows(d["map"]),
            goals=tuple(tuple(g) for g in d["goals"]),
            val=np.array(d["table"]["val"], dtype=float),
            adv=np.array(d["table"]["adv"], dtype=float),
            config=LearnerConfig(**params),
            seed=seed,
            truncated_episodes=truncated,
        )
    raise ValueError(f"unknown provider kind {kind!r}")


def save_provider(provider, path: str | Path) -> None:
    Path(path).write_text(json.dumps(provider.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_provider(spec: str | Path) -> QProvider:
    """``"distance"`` or a path to a provider JSON document."""
    if str(spec) == "distance":
        return DistanceQProvider()
    return provider_from_dict(json.loads(Path(spec).read_text(encoding="utf-8")))
