"""Experiment orchestration: build instances, run the portfolio, aggregate, emit reports."""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ensemble import (
    PUBLISHED_REFERENCE,
    SolverConfig,
    Solution,
    best_solution,
    default_configs,
    load_portfolio,
    metrics,
    run_members,
)
from .gridworld import Instance, generate_instance
from .movingai import instance_from_entries, parse_map, parse_scen_entries, rotated_entries
from .qpolicy import QProvider, load_provider

RANDOM_INSTANCES = 100
STRUCTURED_INSTANCES = 300


def default_max_steps(map_name: str | None = None, size: int | None = None) -> int:
    """Step budget by map kind: 386 for 80x80 random maps, 512 for warehouse maps, else 256."""
    if map_name is not None:
        return 512 if "warehouse" in Path(map_name).stem.lower() else 256
    if size is not None and size >= 80:
        return 386
    return 256


@dataclass
class ExperimentSpec:
    """Either ``map_path`` + ``scen_path`` (structured) or ``size`` + ``density`` (random)."""

    agents: list[int]
    instances: int | None = None
    seed: int = 0
    map_path: str | None = None
    scen_path: str | None = None
    size: int | None = None
    density: float = 0.3
    max_steps: int | None = None
    portfolio: str | None = None  # path, or "random"/"structured"; default follows the map source
    provider: str = "distance"

    def __post_init__(self):
        if not self.agents or any(m < 1 for m in self.agents):
            raise ValueError("agents must be a non-empty list of positive counts")
        if self.structured:
            if not self.scen_path:
                raise ValueError("a map file needs a scenario file")
        elif self.size is None:
            raise ValueError("either --map/--scen or --size is required")
        if not 0 <= self.density < 1:
            raise ValueError("density must lie in [0, 1)")

    @property
    def structured(self) -> bool:
        return self.map_path is not None

    @property
    def map_label(self) -> str:
        if self.structured:
            return Path(self.map_path).stem
        return f"random-{self.size}x{self.size}-{self.density:g}"

    @property
    def n_instances(self) -> int:
        if self.instances is not None:
            return self.instances
        return STRUCTURED_INSTANCES if self.structured else RANDOM_INSTANCES

    @property
    def steps(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return default_max_steps(self.map_path, self.size)

    def configs(self) -> list[SolverConfig]:
        source = self.portfolio or ("structured" if self.structured else "random")
        if source in ("random", "structured"):
            return default_configs(source)
        return load_portfolio(source)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["instances"] = self.n_instances
        d["max_steps"] = self.steps
        return d


def instance_seed(seed: int, m: int, k: int) -> int:
    """Per-instance seed, independent of execution order."""
    return int(np.random.SeedSequence([seed, m, k]).generate_state(1)[0])


def build_instances(spec: ExperimentSpec, m: int) -> list[Instance]:
    n = spec.n_instances
    if not spec.structured:
        return [
            generate_instance(
                spec.size, spec.size, spec.density, m,
                seed=instance_seed(spec.seed, m, k), max_steps=spec.steps,
                name=f"{spec.map_label}-m{m}-{k}",
            )
            for k in range(n)
        ]
    grid = parse_map(Path(spec.map_path).read_text(encoding="utf-8"))
    entries = parse_scen_entries(Path(spec.scen_path).read_text(encoding="utf-8"))
    if len(entries) < m:
        raise ValueError(f"scenario has {len(entries)} entries, {m} requested")
    out = []
    for k in range(n):
        # seeded rotation: each instance starts at a different entry, then follows file order
        offset = int(np.random.default_rng(instance_seed(spec.seed, m, k)).integers(len(entries)))
        picked = rotated_entries(entries, grid, m, offset)
        out.append(instance_from_entries(picked, grid, spec.steps, name=f"{spec.map_label}-m{m}-{k}"))
    return out


@dataclass
class ReportRow:
    map: str
    m: int
    instances: int
    success_rate: float
    episode_length: float
    seed: int
    per_config: dict[str, dict] = field(default_factory=dict)
    # per-config solver seconds; kept out of the deterministic report
    wall_clock: dict[str, float] = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock")
        return d


def _solve_instance(args) -> list[Solution]:
    instance, cfgs, provider = args
    return run_members(instance, cfgs, provider)


def _map_ordered(fn, work: list, jobs: int) -> list:
    if jobs <= 1 or len(work) <= 1:
        return [fn(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # pool.map yields in submission order, so assembly is deterministic
        return list(pool.map(fn, work))


def run_experiment(
    spec: ExperimentSpec, jobs: int = 1, provider: QProvider | None = None
) -> tuple[list[ReportRow], list[dict], list[tuple[Instance, Solution]]]:
    """Rows, per-instance records and the winning solution per instance."""
    provider = provider or load_provider(spec.provider)
    cfgs = spec.configs()
    rows, per_instance, winners = [], [], []
    for m in spec.agents:
        instances = build_instances(spec, m)
        members = _map_ordered(_solve_instance, [(inst, cfgs, provider) for inst in instances], jobs)
        best = []
        for inst, sols in zip(instances, members):
            win = best_solution(sols)
            best.append(win)
            winners.append((inst, win))
            per_instance.append({
                "instance": inst.name,
                "m": m,
                "winner": win.config,
                "makespan": win.makespan,
                "success": win.success,
                "members": {s.config: {"makespan": s.makespan, "success": s.success} for s in sols},
            })
        agg = metrics(best, spec.steps)
        per_config = {}
        wall = {}
        for j, cfg in enumerate(cfgs):
            col = [sols[j] for sols in members]
            mc = metrics(col, spec.steps)
            per_config[cfg.label] = {"success_rate": mc["success_rate"], "episode_length": mc["episode_length"]}
            wall[cfg.label] = sum(s.wall_time for s in col)
        rows.append(ReportRow(spec.map_label, m, agg["instances"], agg["success_rate"],
                              agg["episode_length"], spec.seed, per_config, wall))
    return rows, per_instance, winners


def report_dict(spec: ExperimentSpec, rows: Sequence[ReportRow], per_instance: list[dict]) -> dict:
    out = {"spec": spec.to_dict(), "rows": [r.to_dict() for r in rows], "per_instance": per_instance}
    ref = PUBLISHED_REFERENCE.get(spec.map_label) if spec.structured else None
    if ref:
        # trained-network numbers for context; not produced by this run
        out["published_reference"] = {
            str(m): {"episode_length": el, "success_rate": sr} for m, (el, sr) in ref.items()
        }
    return out


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


CSV_FIELDS = ["map", "m", "config", "instances", "success_rate", "episode_length", "seed"]


def report_csv(rows: Sequence[ReportRow]) -> str:
    """One line for the ensemble (config ``ensemble``) and one per member config."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r.map, r.m, "ensemble", r.instances, repr(r.success_rate), repr(r.episode_length), r.seed])
        for label, v in r.per_config.items():
            w.writerow([r.map, r.m, label, r.instances, repr(v["success_rate"]), repr(v["episode_length"]), r.seed])
    return buf.getvalue()


def timings_dict(rows: Sequence[ReportRow], elapsed: float) -> dict:
    return {"elapsed_seconds": elapsed, "rows": [{"map": r.map, "m": r.m, "solver_seconds": r.wall_clock} for r in rows]}


def solution_document(instance: Instance, sol: Solution, cfg: SolverConfig | None = None) -> dict:
    doc = {
        "instance": instance.to_dict(),
        "config": sol.config,
        "actions": sol.actions,
        "makespan": sol.makespan,
        "success": sol.success,
    }
    if cfg is not None:
        doc["config_settings"] = cfg.to_dict()
    return doc


def run_and_write(
    spec: ExperimentSpec, out: str | Path | None, fmt: str = "json", jobs: int = 1,
    solutions_dir: str | Path | None = None,
) -> str:
    """Run ``spec`` and write the report; timings go to ``<out>.timings.json``."""
    t0 = time.perf_counter()
    rows, per_instance, winners = run_experiment(spec, jobs)
    elapsed = time.perf_counter() - t0
    text = report_json(report_dict(spec, rows, per_instance)) if fmt == "json" else report_csv(rows)
    if out is not None:
        Path(out).write_text(text, encoding="utf-8")
        Path(f"{out}.timings.json").write_text(json.dumps(timings_dict(rows, elapsed), indent=1) + "\n")
    if solutions_dir is not None:
        d = Path(solutions_dir)
        d.mkdir(parents=True, exist_ok=True)
        for inst, sol in winners:
            (d / f"{inst.name}.json").write_text(json.dumps(solution_document(inst, sol)) + "\n")
    return text
