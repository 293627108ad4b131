import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmapf.gridworld import Action, GridMap, Instance, WorldState, apply_action, generate_instance
from qmapf.qpolicy import (
    DistanceQProvider,
    DuelingHead,
    LearnerConfig,
    TabularQProvider,
    dueling_q,
    load_provider,
    n_step_return,
    save_provider,
    tabular_train,
    td_loss,
    value_iteration,
)

finite = st.floats(-100, 100, allow_nan=False)


def test_dueling_examples():
    assert dueling_q(DuelingHead(1.0, [1, 2, 3, 0, 4])).tolist() == [0, 1, 2, -1, 3]
    assert dueling_q(DuelingHead(2.5, [7.0] * 5)).tolist() == [2.5] * 5


def test_n_step_examples():
    assert n_step_return([], 0.9, 4.2) == 4.2
    assert n_step_return([-0.075], 0.9, 2.0) == pytest.approx(1.725)


@settings(max_examples=200)
@given(st.lists(finite, max_size=20), st.floats(0.01, 1.0), finite)
def test_n_step_matches_recursion(rewards, gamma, boot):
    ret = boot
    for r in reversed(rewards):
        ret = r + gamma * ret
    assert n_step_return(rewards, gamma, boot) == pytest.approx(ret, abs=1e-12, rel=1e-12)


def test_td_loss_examples():
    assert td_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert td_loss([1.725], [1.5]) == pytest.approx(0.050625)
    with pytest.raises(ValueError):
        td_loss([], [])
    with pytest.raises(ValueError):
        td_loss([1.0], [1.0, 2.0])


@settings(max_examples=100)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30))
def test_td_loss_matches_elementwise(pairs):
    a, b = zip(*pairs)
    want = sum((x - y) ** 2 for x, y in pairs) / len(pairs)
    assert td_loss(a, b) == pytest.approx(want, abs=1e-12, rel=1e-12)


def test_learner_config_validation():
    for bad in (dict(gamma=0), dict(gamma=1.5), dict(n=0), dict(alpha=0), dict(eps_end=2), dict(target_sync=0)):
        with pytest.raises(ValueError):
            LearnerConfig(**bad)
    cfg = LearnerConfig(eps_start=1.0, eps_end=0.0, eps_decay_steps=10)
    assert cfg.epsilon(0) == 1.0 and cfg.epsilon(5) == 0.5 and cfg.epsilon(50) == 0.0


def test_distance_q_examples():
    g = GridMap.empty(5, 5)
    inst = Instance(g, ((0, 0), (2, 2)), ((4, 4), (2, 3)), 10)
    p = DistanceQProvider()
    on_goal = WorldState(inst, ((0, 0), (2, 3)), 0, (((0, 0),), ((2, 3),)))
    row = p.q_row(on_goal, 1)
    assert row[Action.STAY] == 0 and int(np.argmax(row)) == Action.STAY
    row = p.q_row(WorldState.initial(inst), 1)
    assert int(np.argmax(row)) == Action.RIGHT and (row == row.max()).sum() == 1
    corner = p.q_row(WorldState.initial(inst), 0)
    assert np.isneginf(corner[Action.UP]) and np.isneginf(corner[Action.LEFT])


def test_distance_q_argmax_descends():
    for seed in range(30):
        inst = generate_instance(10, 10, 0.3, 4, seed=seed)
        s = WorldState.initial(inst)
        for i in range(4):
            row = DistanceQProvider().q_row(s, i)
            f = inst.goal_fields[i]
            here = f[s.positions[i]]
            best = apply_action(s.positions[i], int(np.argmax(row)))
            assert f[best] == here - 1 or (here == 0 and f[best] == 0)


def test_value_iteration_on_goal_is_stay():
    g = GridMap.empty(3, 3)
    q = value_iteration(g, (1, 1), 0.9)
    assert int(np.argmax(q[1, 1])) == Action.STAY and q[1, 1].max() == 0.0
    assert q[0, 1].max() == pytest.approx(3.0)
    assert q[0, 0].max() == pytest.approx(-0.075 + 0.9 * 3.0)


def test_tabular_50k_steps_reaches_goal_in_manhattan_steps():
    g = GridMap.empty(5, 5)
    goal = (2, 2)
    p = tabular_train(g, [goal], LearnerConfig(gamma=0.95, steps=50_000), seed=0)
    for s in g.free_cells():
        assert p.greedy_path_length(s, goal) == abs(s[0] - 2) + abs(s[1] - 2)
    assert int(np.argmax(p.table(goal)[goal])) == Action.STAY


def test_tabular_deterministic_and_n_step():
    g = GridMap.from_rows(["....", ".@..", "...."])
    cfg = LearnerConfig(gamma=0.9, n=3, steps=5_000)
    a = tabular_train(g, [(0, 3), (2, 0)], cfg, seed=11)
    b = tabular_train(g, [(0, 3), (2, 0)], cfg, seed=11)
    assert np.array_equal(a.val, b.val) and np.array_equal(a.adv, b.adv)
    with pytest.raises(ValueError):
        tabular_train(GridMap.empty(11, 10), [(0, 0)])
    with pytest.raises(ValueError):
        tabular_train(g, [(1, 1)])


def test_provider_round_trip(tmp_path):
    g = GridMap.empty(3, 3)
    p = tabular_train(g, [(0, 0), (2, 2)], LearnerConfig(steps=2_000), seed=3)
    path = tmp_path / "p.json"
    save_provider(p, path)
    q = load_provider(path)
    assert isinstance(q, TabularQProvider)
    assert np.array_equal(q.val, p.val) and np.array_equal(q.adv, p.adv) and q.goals == p.goals
    inst = Instance(g, ((1, 1),), ((2, 2),), 5)
    assert np.array_equal(q.q_row(WorldState.initial(inst), 0), p.q_row(WorldState.initial(inst), 0))
    assert isinstance(load_provider("distance"), DistanceQProvider)
    with pytest.raises(ValueError, match="different map"):
        q.q_row(WorldState.initial(Instance(GridMap.empty(4, 4), ((1, 1),), ((2, 2),), 5)), 0)
    with pytest.raises(ValueError, match="not trained"):
        q.q_row(WorldState.initial(Instance(g, ((1, 1),), ((0, 1),), 5)), 0)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        load_provider(bad)
