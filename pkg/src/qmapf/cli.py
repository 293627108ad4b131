"""``qmapf`` command line: solve, bench, validate, gen, train-tabular."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import ExperimentSpec, default_max_steps, run_and_write, solution_document
from .ensemble import default_configs, load_portfolio, replay, run_members, best_solution
from .gridworld import GridMap, Instance, generate_instance
from .movingai import parse_map, parse_scen, serialize_map, serialize_scen
from .qpolicy import LearnerConfig, load_provider, save_provider, tabular_train

log = logging.getLogger("qmapf")


def _agent_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("agent counts must be positive")
    return vals


def _cells(text: str) -> list[tuple[int, int]]:
    """``r,c;r,c`` -> list of cells."""
    out = []
    for part in text.split(";"):
        r, c = part.split(",")
        out.append((int(r), int(c)))
    return out


def _add_source(p: argparse.ArgumentParser, agents_help: str) -> None:
    p.add_argument("--map", help="MovingAI .map file")
    p.add_argument("--scen", help="MovingAI .scen file (with --map)")
    p.add_argument("--size", type=int, help="side of a random square map (instead of --map)")
    p.add_argument("--density", type=float, default=0.3, help="obstacle density of random maps")
    p.add_argument("--agents", type=_agent_list, required=True, help=agents_help)
    p.add_argument("--max-steps", type=int, help="step budget; defaults by map kind")
    p.add_argument("--portfolio", help="portfolio JSON, or 'random' / 'structured'")
    p.add_argument("--provider", default="distance", help="'distance' or a provider JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmapf", description="Q-value guided multi-agent path finding on grids")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance and write its solution JSON")
    _add_source(p, "number of agents")
    p.add_argument("--out", help="solution file (stdout when omitted)")

    p = sub.add_parser("bench", help="run an experiment and write a report")
    _add_source(p, "comma-separated agent counts, e.g. 4,8,16")
    p.add_argument("--instances", type=int, help="instances per agent count (default 100 random, 300 structured)")
    p.add_argument("--out", help="report file (stdout when omitted); timings go to <out>.timings.json")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--solutions", help="directory for the winning solution of every instance")

    p = sub.add_parser("validate", help="replay a solution JSON and report conflicts")
    p.add_argument("solution", help="solution JSON file")
    p.add_argument("--out", help="conflict report file (stdout when omitted)")

    p = sub.add_parser("gen", help="write a random .map/.scen corpus")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train-tabular", help="train the tabular learner and write provider JSON")
    p.add_argument("--map", help="MovingAI .map file (at most 100 cells)")
    p.add_argument("--size", type=int, default=5, help="side of an obstacle-free map when --map is absent")
    p.add_argument("--goals", type=_cells, help="goal cells 'r,c;r,c' (default: every free cell)")
    p.add_argument("--steps", type=int, default=LearnerConfig.steps)
    p.add_argument("--gamma", type=float, default=LearnerConfig.gamma)
    p.add_argument("--n", type=int, default=LearnerConfig.n, help="return horizon")
    p.add_argument("--alpha", type=float, default=LearnerConfig.alpha)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="provider JSON file")
    return ap


def _single_instance(args) -> Instance:
    if len(args.agents) != 1:
        raise SystemExit("solve takes a single agent count")
    m = args.agents[0]
    if args.map:
        if not args.scen:
            raise SystemExit("--map needs --scen")
        grid = parse_map(Path(args.map).read_text(encoding="utf-8"))
        steps = args.max_steps or default_max_steps(args.map)
        return parse_scen(Path(args.scen).read_text(encoding="utf-8"), grid, m, steps, name=Path(args.scen).stem)
    if args.size is None:
        raise SystemExit("either --map/--scen or --size is required")
    steps = args.max_steps or default_max_steps(size=args.size)
    return generate_instance(args.size, args.size, args.density, m, seed=args.seed, max_steps=steps,
                             name=f"random-{args.size}x{args.size}-s{args.seed}")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    inst = _single_instance(args)
    src = args.portfolio or ("structured" if args.map else "random")
    cfgs = default_configs(src) if src in ("random", "structured") else load_portfolio(src)
    members = run_members(inst, cfgs, load_provider(args.provider), args.jobs)
    sol = best_solution(members)
    cfg = next(c for c in cfgs if c.label == sol.config)
    log.info("%s: config %s, makespan %d, success %s", inst.name, sol.config, sol.makespan, sol.success)
    _emit(json.dumps(solution_document(inst, sol, cfg)) + "\n", args.out)
    return 0


def cmd_bench(args) -> int:
    spec = ExperimentSpec(
        agents=args.agents, instances=args.instances, seed=args.seed, map_path=args.map,
        scen_path=args.scen, size=args.size, density=args.density, max_steps=args.max_steps,
        portfolio=args.portfolio, provider=args.provider,
    )
    text = run_and_write(spec, args.out, args.format, args.jobs, args.solutions)
    if not args.out:
        sys.stdout.write(text)
    return 0


def validate_document(doc: dict) -> dict:
    """Replay a solution document; ``ok`` also requires the claimed makespan and success."""
    inst = Instance.from_dict(doc["instance"])
    rep = replay(inst, doc["actions"])
    rep["claimed"] = {"makespan": doc.get("makespan"), "success": doc.get("success")}
    rep["ok"] = (
        not rep["violations"]
        and rep["makespan"] == doc.get("makespan")
        and rep["success"] == doc.get("success")
    )
    return rep


def cmd_validate(args) -> int:
    doc = json.loads(Path(args.solution).read_text(encoding="utf-8"))
    rep = validate_document(doc)
    _emit(json.dumps(rep, indent=1) + "\n", args.out)
    return 0 if rep["ok"] else 1


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = default_max_steps(size=args.size)
    for k in range(args.instances):
        name = f"random-{args.size}-{args.size}-{args.density:g}-{k}"
        inst = generate_instance(args.size, args.size, args.density, args.agents,
                                 seed=[args.seed, k], max_steps=steps, name=name)
        optimal = [float(f[s]) for f, s in zip(inst.goal_fields, inst.starts)]
        (out / f"{name}.map").write_text(serialize_map(inst.grid))
        (out / f"{name}.scen").write_text(serialize_scen(inst, f"{name}.map", optimal))
    log.info("wrote %d instances to %s", args.instances, out)
    return 0


def cmd_train_tabular(args) -> int:
    if args.map:
        grid = parse_map(Path(args.map).read_text(encoding="utf-8"))
    else:
        grid = GridMap.empty(args.size, args.size)
    goals = args.goals or grid.free_cells()
    cfg = LearnerConfig(gamma=args.gamma, n=args.n, alpha=args.alpha, steps=args.steps)
    provider = tabular_train(grid, goals, cfg, seed=args.seed)
    save_provider(provider, args.out)
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "bench": cmd_bench,
    "validate": cmd_validate,
    "gen": cmd_gen,
    "train-tabular": cmd_train_tabular,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
