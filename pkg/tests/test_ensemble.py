import json

import pytest

from qmapf.ensemble import (
    BASELINE,
    SolverConfig,
    Solution,
    best_solution,
    default_configs,
    load_portfolio,
    metrics,
    replay,
    run_ensemble,
    run_members,
    run_solver,
    save_portfolio,
)
from qmapf.gridworld import GridMap, Instance, generate_instance
from qmapf.qpolicy import DistanceQProvider


def sol(label, makespan, success, on_goal=0):
    return Solution("x", label, [], makespan, success, [], on_goal)


def test_default_configs():
    rnd = default_configs("random")
    assert len(rnd) == 24 and len({c.label for c in rnd}) == 24
    assert sum(c.priority_resolution for c in rnd) == 12
    assert all(c.hybrid_guidance for c in rnd)
    assert len(default_configs("structured")) == 12
    with pytest.raises(ValueError):
        default_configs("other")


def test_best_solution_rules():
    assert best_solution([sol("a", 10, True), sol("b", 8, True), sol("c", 8, True)]).config == "b"
    assert best_solution([sol("a", 5, False, 3), sol("b", 9, True)]).config == "b"
    assert best_solution([sol("a", 20, False, 1), sol("b", 20, False, 2)]).config == "b"
    with pytest.raises(ValueError):
        best_solution([])


def test_run_solver_single_agent():
    g = GridMap.empty(4, 4)
    inst = Instance(g, ((0, 0),), ((3, 3),), 20)
    s = run_solver(inst, SolverConfig("t0-r2", 0, 2), DistanceQProvider())
    assert s.success and s.makespan == 6 and s.goal_times == [6]
    rep = replay(inst, s.actions)
    assert rep["violations"] == [] and rep["makespan"] == 6 and rep["success"]


def test_budget_exhaustion_is_failure():
    inst = generate_instance(12, 12, 0.2, 8, seed=1, max_steps=3)
    s = run_solver(inst, BASELINE, DistanceQProvider())
    assert not s.success and s.makespan == 3 and len(s.actions) == 3


def test_members_parallel_matches_serial():
    inst = generate_instance(10, 10, 0.2, 6, seed=9, max_steps=64)
    cfgs = default_configs("random")[:6]
    a = run_members(inst, cfgs, DistanceQProvider(), jobs=1)
    b = run_members(inst, cfgs, DistanceQProvider(), jobs=3)
    assert [x.to_dict() for x in a] == [x.to_dict() for x in b]


def test_ensemble_is_min_of_members():
    inst = generate_instance(10, 10, 0.25, 8, seed=4, max_steps=64)
    cfgs = default_configs("random")
    members = run_members(inst, cfgs, DistanceQProvider())
    best = run_ensemble(inst, cfgs, DistanceQProvider())
    done = [m.makespan for m in members if m.success]
    if done:
        assert best.success and best.makespan == min(done)


def test_metrics():
    out = metrics([sol("a", 10, True), sol("a", 30, False)], max_steps=50)
    assert out == {"instances": 2, "success_rate": 0.5, "episode_length": 30.0}
    with pytest.raises(ValueError):
        metrics([])


def test_replay_flags_conflicts():
    g = GridMap.empty(2, 3)
    inst = Instance(g, ((0, 0), (0, 2)), ((0, 1), (1, 0)), 5)
    rep = replay(inst, [[4, 3]])
    assert rep["violations"][0]["kind"] == "vertex" and not rep["success"]


def test_portfolio_round_trip(tmp_path):
    cfgs = default_configs("structured")
    path = tmp_path / "p.json"
    save_portfolio(cfgs, path)
    assert load_portfolio(path) == cfgs
    path.write_text(json.dumps({"configs": [cfgs[0].to_dict(), cfgs[0].to_dict()]}))
    with pytest.raises(ValueError):
        load_portfolio(path)
    bad = cfgs[0].to_dict()
    bad["toggles"]["warp"] = True
    path.write_text(json.dumps([bad]))
    with pytest.raises(ValueError):
        load_portfolio(path)
    with pytest.raises(ValueError):
        SolverConfig("x", tau=5)
