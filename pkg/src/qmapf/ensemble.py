"""Portfolio execution: run several solver configurations, keep the lowest makespan."""
from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .gridworld import Instance, WorldState, apply_action, detect_conflicts, step
from .inference import StepContext, solver_step
from .pathfinding import AStarKind
from .qpolicy import QProvider

RANDOM_TAUS = (0, 1, 2)
RANDOM_RHOS = (2, 3, 4, 5)
STRUCTURED_RHOS = (3, 4)

# Published reference numbers of the trained-network method (episode length,
# success rate) on the structured benchmark maps. Printed for context only;
# they are not reproducible without the trained network.
PUBLISHED_REFERENCE = {
    "den312d": {4: (79.05, 1.0), 8: (91.42, 1.0), 16: (104.87, 1.0), 32: (110.78, 1.0), 64: (121.66, 1.0)},
    "warehouse": {4: (134.56, 1.0), 8: (151.94, 1.0), 16: (164.05, 1.0), 32: (176.35, 1.0), 64: (189.58, 1.0)},
}


@dataclass(frozen=True)
class SolverConfig:
    label: str
    tau: int = 2
    rho: int = 3
    priority_resolution: bool = True
    escape_policy: bool = True
    hybrid_guidance: bool = True

    def __post_init__(self):
        AStarKind(self.tau)
        if self.rho < 0:
            raise ValueError(f"{self.label}: rho must be >= 0")

    def context(self, state: WorldState) -> StepContext:
        return StepContext(
            state,
            tau=self.tau,
            rho=self.rho,
            priority_resolution=self.priority_resolution,
            escape_policy=self.escape_policy,
            hybrid_guidance=self.hybrid_guidance,
        )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "tau": self.tau,
            "rho": self.rho,
            "toggles": {
                "priority_resolution": self.priority_resolution,
                "escape_policy": self.escape_policy,
                "hybrid_guidance": self.hybrid_guidance,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        toggles = d.get("toggles", {})
        unknown = set(toggles) - {"priority_resolution", "escape_policy", "hybrid_guidance"}
        if unknown:
            raise ValueError(f"unknown toggles {sorted(unknown)}")
        return cls(label=d["label"], tau=int(d["tau"]), rho=int(d["rho"]), **toggles)


BASELINE = SolverConfig("baseline", tau=0, rho=0, priority_resolution=False, escape_policy=False, hybrid_guidance=False)


@dataclass
class Solution:
    instance: str
    config: str
    actions: list[list[int]]
    makespan: int
    success: bool
    goal_times: list[int | None]
    agents_on_goal: int
    # seconds spent inside the solver; excluded from deterministic reports
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        return d


def run_solver(instance: Instance, cfg: SolverConfig, provider: QProvider) -> Solution:
    """Roll one episode; an exhausted budget yields a failed solution."""
    t0 = time.perf_counter()
    state = WorldState.initial(instance)
    actions: list[list[int]] = []
    m = instance.num_agents
    arrived: list[int | None] = [None] * m
    while not state.done:
        joint = solver_step(cfg.context(state), provider)
        actions.append(joint)
        state, _, _ = step(state, joint)
        for i in range(m):
            if state.on_goal(i):
                if arrived[i] is None:
                    arrived[i] = state.timestep
            else:
                arrived[i] = None
    success = state.all_on_goal
    return Solution(
        instance=instance.name,
        config=cfg.label,
        actions=actions,
        makespan=state.timestep,
        success=success,
        goal_times=arrived,
        agents_on_goal=sum(state.on_goal(i) for i in range(m)),
        wall_time=time.perf_counter() - t0,
    )


def best_solution(members: Sequence[Solution]) -> Solution:
    """Lowest makespan among successes; otherwise most agents on goal.

    Ties go to the earlier member.
    """
    if not members:
        raise ValueError("no member solutions")
    done = [s for s in members if s.success]
    if done:
        return min(done, key=lambda s: s.makespan)
    return max(members, key=lambda s: s.agents_on_goal)


def _run_member(args):
    instance, cfg, provider = args
    return run_solver(instance, cfg, provider)


def run_members(
    instance: Instance, cfgs: Sequence[SolverConfig], provider: QProvider, jobs: int = 1
) -> list[Solution]:
    """Every member's solution, in config order whatever the completion order."""
    if not cfgs:
        raise ValueError("empty portfolio")
    work = [(instance, c, provider) for c in cfgs]
    if jobs <= 1:
        return [_run_member(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_member, work))


def run_ensemble(
    instance: Instance, cfgs: Sequence[SolverConfig], provider: QProvider, jobs: int = 1
) -> Solution:
    return best_solution(run_members(instance, cfgs, provider, jobs))


def default_configs(kind: str) -> list[SolverConfig]:
    """tau x rho grid with all strategies on, doubled with priority decisions off."""
    if kind == "random":
        grid = list(itertools.product(RANDOM_TAUS, RANDOM_RHOS))
    elif kind == "structured":
        grid = list(itertools.product(RANDOM_TAUS, STRUCTURED_RHOS))
    else:
        raise ValueError(f"unknown portfolio kind {kind!r}")
    full = [SolverConfig(f"t{t}-r{r}", t, r) for t, r in grid]
    plain = [
        SolverConfig(f"t{t}-r{r}-noprio", t, r, priority_resolution=False, escape_policy=False)
        for t, r in grid
    ]
    return full + plain


def metrics(solutions: Iterable[Solution], max_steps: int | None = None) -> dict:
    """Success rate and mean episode length; failures count as the full budget."""
    sols = list(solutions)
    if not sols:
        raise ValueError("no solutions to aggregate")
    lengths = []
    for s in sols:
        if s.success:
            lengths.append(s.makespan)
        else:
            lengths.append(max_steps if max_steps is not None else s.makespan)
    return {
        "instances": len(sols),
        "success_rate": sum(s.success for s in sols) / len(sols),
        "episode_length": sum(lengths) / len(lengths),
    }


def replay(instance: Instance, actions: Sequence[Sequence[int]]) -> dict:
    """Re-execute an action log and report conflicts, makespan and success."""
    state = WorldState.initial(instance)
    violations = []
    for t, joint in enumerate(actions):
        if state.done:
            violations.append({"t": t, "kind": "after_done", "agents": []})
            break
        if len(joint) != state.num_agents:
            violations.append({"t": t, "kind": "arity", "agents": []})
            break
        targets = [apply_action(p, a) for p, a in zip(state.positions, joint)]
        for c in detect_conflicts(state.positions, targets, instance.grid):
            violations.append({"t": t, "kind": c.kind.value, "agents": list(c.agents)})
        state, _, _ = step(state, joint)
    return {
        "violations": violations,
        "makespan": state.timestep,
        "success": state.all_on_goal,
        "agents_on_goal": sum(state.on_goal(i) for i in range(state.num_agents)),
    }


def load_portfolio(path: str | Path) -> list[SolverConfig]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data["configs"]
    cfgs = [SolverConfig.from_dict(d) for d in data]
    labels = [c.label for c in cfgs]
    if len(set(labels)) != len(labels):
        raise ValueError("portfolio labels must be unique")
    if not cfgs:
        raise ValueError("empty portfolio")
    return cfgs


def save_portfolio(cfgs: Sequence[SolverConfig], path: str | Path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cfgs], indent=1) + "\n", encoding="utf-8")
