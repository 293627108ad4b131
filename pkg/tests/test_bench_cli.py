import json

import numpy as np
import pytest

from qmapf.bench import ExperimentSpec, build_instances, default_max_steps, report_csv, run_experiment
from qmapf.cli import main, validate_document
from qmapf.gridworld import GridMap, generate_instance
from qmapf.movingai import FormatError, parse_map, parse_scen, parse_scen_entries, serialize_map, serialize_scen
from qmapf.pathfinding import bfs_distance_field

MAP = "type octile\nheight 3\nwidth 4\nmap\n....\n.@T.\n..G.\n"


def test_parse_map_symbols():
    g = parse_map("type octile\nheight 2\nwidth 2\nmap\n.@\nT.\n")
    assert g.cells.tolist() == [[0, 1], [1, 0]]
    assert parse_map(MAP).cells.tolist() == [[0, 0, 0, 0], [0, 1, 1, 0], [0, 0, 0, 0]]


@pytest.mark.parametrize("text", [
    "type octile\nheight 3\nwidth 2\nmap\n..\n..\n",
    "type octile\nheight 1\nwidth 2\nmap\n...\n",
    "type octile\nheight 1\nwidth 2\nmap\n.x\n",
    "height 1\nwidth 2\nmap\n..\n",
    "type octile\nheight 1\nwidth 2\n..\n",
])
def test_parse_map_errors(text):
    with pytest.raises(FormatError):
        parse_map(text)


def test_map_round_trip():
    for seed in range(20):
        inst = generate_instance(9, 7, 0.3, 1, seed=seed)
        assert parse_map(serialize_map(inst.grid)) == inst.grid


def scen_lines(rows):
    return "version 1\n" + "".join("\t".join(map(str, r)) + "\n" for r in rows)


def test_parse_scen():
    g = parse_map(MAP)
    text = scen_lines([
        (0, "m.map", 4, 3, 0, 0, 3, 2, 5),
        (0, "m.map", 4, 3, 3, 0, 0, 2, 5),
        (0, "m.map", 4, 3, 1, 0, 0, 1, 2),
        (0, "m.map", 4, 3, 2, 0, 1, 2, 3),
    ])
    inst = parse_scen(text, g, 4)
    assert inst.num_agents == 4 and inst.starts[0] == (0, 0) and inst.goals[0] == (2, 3)
    assert parse_scen(text, g, 2).num_agents == 2
    with pytest.raises(FormatError):
        parse_scen(text, g, 5)
    bad = scen_lines([(0, "m.map", 4, 3, 0, 0, 1, 1, 2)])
    with pytest.raises(FormatError, match="line 2"):
        parse_scen(bad, g, 1)
    dup = scen_lines([(0, "m.map", 4, 3, 0, 0, 3, 2, 5), (0, "m.map", 4, 3, 3, 2, 0, 2, 5)])
    with pytest.raises(FormatError, match="line 3"):
        parse_scen(dup, g, 2)


def test_scen_optimal_column_matches_bfs(tmp_path):
    assert main(["gen", "--size", "12", "--agents", "6", "--instances", "3", "--seed", "2", "--out", str(tmp_path)]) == 0
    for mp in sorted(tmp_path.glob("*.map")):
        g = parse_map(mp.read_text())
        for e in parse_scen_entries(mp.with_suffix(".scen").read_text()):
            assert bfs_distance_field(g, e.goal)[e.start] == e.optimal


def test_default_max_steps():
    assert default_max_steps(size=40) == 256 and default_max_steps(size=80) == 386
    assert default_max_steps("maps/den312d.map") == 256
    assert default_max_steps("maps/warehouse-10-20-10-2-1.map") == 512


def test_experiment_determinism_and_feasibility():
    spec = ExperimentSpec(agents=[4], instances=20, seed=1, size=10, density=0.3)
    a = run_experiment(spec)
    b = run_experiment(spec)
    assert [r.to_dict() for r in a[0]] == [r.to_dict() for r in b[0]] and a[1] == b[1]
    with pytest.raises(ValueError):
        build_instances(ExperimentSpec(agents=[60], instances=1, size=10, density=0.3), 60)


def test_structured_rotation(tmp_path):
    inst = generate_instance(10, 10, 0.1, 12, seed=3)
    (tmp_path / "m.map").write_text(serialize_map(inst.grid))
    (tmp_path / "m.scen").write_text(serialize_scen(inst, "m.map"))
    spec = ExperimentSpec(agents=[4], instances=5, map_path=str(tmp_path / "m.map"),
                          scen_path=str(tmp_path / "m.scen"), seed=7)
    built = build_instances(spec, 4)
    assert len(built) == 5 and all(b.max_steps == 256 for b in built)
    assert len({b.starts for b in built}) > 1
    assert len(spec.configs()) == 12


def test_reports_carry_identical_numbers():
    spec = ExperimentSpec(agents=[2, 4], instances=4, seed=3, size=8, density=0.2)
    rows, _, _ = run_experiment(spec)
    lines = report_csv(rows).strip().splitlines()
    assert len(lines) == 1 + 2 * 25
    first = lines[1].split(",")
    assert float(first[4]) == rows[0].success_rate and float(first[5]) == rows[0].episode_length


def test_cli_bench_solutions_validate(tmp_path, capsys):
    out = tmp_path / "r.json"
    sols = tmp_path / "sols"
    rc = main(["bench", "--size", "8", "--density", "0.2", "--agents", "3", "--instances", "3",
               "--seed", "4", "--out", str(out), "--solutions", str(sols)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert set(report) == {"spec", "rows", "per_instance"}
    assert "wall_clock" not in report["rows"][0]
    assert (tmp_path / "r.json.timings.json").exists()
    files = sorted(sols.glob("*.json"))
    assert len(files) == 3
    for f in files:
        assert main(["validate", str(f), "--out", str(tmp_path / "v.json")]) == 0
        assert json.loads((tmp_path / "v.json").read_text())["violations"] == []


def test_validate_rejects_tampered_solution(tmp_path):
    sol = tmp_path / "s.json"
    assert main(["solve", "--size", "8", "--agents", "3", "--seed", "2", "--out", str(sol)]) == 0
    doc = json.loads(sol.read_text())
    assert validate_document(doc)["ok"]
    doc["makespan"] += 1
    assert not validate_document(doc)["ok"]
    doc = json.loads(sol.read_text())
    doc["actions"] = [[0] * 3] + doc["actions"]
    doc["actions"][0][0] = 1 if doc["instance"]["starts"][0][0] == 0 else 0
    rep = validate_document(doc)
    assert not rep["ok"]


def test_cli_train_tabular(tmp_path):
    out = tmp_path / "p.json"
    assert main(["train-tabular", "--size", "3", "--goals", "0,0;2,2", "--steps", "3000", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["kind"] == "tabular" and doc["goals"] == [[0, 0], [2, 2]]


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["solve", "--size", "4", "--agents", "20", "--out", str(tmp_path / "x.json")]) == 2
    with pytest.raises(SystemExit):
        main(["bench", "--agents", "x"])
