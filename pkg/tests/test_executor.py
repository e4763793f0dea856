import json
import math

import numpy as np
import pytest

from macdec.dp import exhaustive_backup
from macdec.domains.warehouse import BASELINES, deliveries, hand_policy
from macdec.executor import (
    batch_stats,
    check_replay,
    controller_graph,
    export_controller,
    import_controller,
    replay_agent,
    run_episode,
    run_episode_from_graphs,
)
from macdec.policy import JointPolicy, PolicyError, PolicyTree, evaluate_exact, make_leaf
from conftest import mini, mini_ombdp, toy, toy_odp


def test_deterministic_toy_traces_do_not_depend_on_seed():
    model, options = toy("det-counter")
    jp, rep, _ = toy_odp("det-counter")
    a = run_episode(model, options, jp, seed=1)
    b = run_episode(model, options, jp, seed=99, index=5)
    assert [s.to_json() for s in a.steps] == [s.to_json() for s in b.steps]
    assert a.ret == rep.value


def test_trace_shape_and_return(toy_name):
    model, options = toy(toy_name)
    jp, _, _ = toy_odp(toy_name)
    tr = run_episode(model, options, jp, seed=3, index=2)
    assert len(tr.steps) == model.horizon
    assert [s.t for s in tr.steps] == list(range(model.horizon))
    assert tr.ret == pytest.approx(sum(model.discount ** s.t * s.reward for s in tr.steps), abs=1e-12)
    assert not tr.fell_off
    assert tr.steps[0].options == [t.option for t in jp.trees]


def test_same_seed_same_trace():
    w = mini(horizon=8)
    jp, _, _ = mini_ombdp()
    a = run_episode(w.model, w.options, jp, seed=4, index=7)
    b = run_episode(w.model, w.options, jp, seed=4, index=7)
    assert a.to_jsonl() == b.to_jsonl()


def test_jsonl_lines_parse():
    model, options = toy("coin-coord")
    jp, _, _ = toy_odp("coin-coord")
    tr = run_episode(model, options, jp, seed=0)
    lines = [json.loads(x) for x in tr.to_jsonl().splitlines()]
    assert len(lines) >= len(tr.steps)
    steps = [x for x in lines if "actions" in x]
    assert [x["actions"] for x in steps] == [s.actions for s in tr.steps]


def test_replay_reproduces_each_agent(toy_name):
    model, options = toy(toy_name)
    jp, _, _ = toy_odp(toy_name)
    for k in range(20):
        tr = run_episode(model, options, jp, seed=8, index=k)
        assert check_replay(model, options, jp, tr)


def test_replay_detects_a_different_tree():
    w = mini(horizon=8)
    jp, _, _ = mini_ombdp()
    tr = run_episode(w.model, w.options, jp, seed=0)
    other = hand_policy(w.options, "both-D2", 8).trees[0]
    assert replay_agent(w.options, 0, other, tr, w.model) != [s.actions[0] for s in tr.steps]


def test_leaf_export_is_single_node():
    _, options = toy("fig3-shape")
    leaf = make_leaf(options, 0, "m2")
    g = json.loads(export_controller(leaf, "json"))
    assert g == {"initial": "n0", "nodes": [{"id": "n0", "option": "m2"}], "edges": []}
    dot = export_controller(leaf, "dot")
    assert dot.count("->") == 0 and "doublecircle" in dot


def test_fig3_tree_export_has_root_m1_and_two_edges():
    _, options = toy("fig3-shape")
    trees = exhaustive_backup(options, exhaustive_backup(options, [[]]))[0]
    tree = next(t for t in trees if t.option == "m1")
    g = controller_graph(tree)
    root = g["initial"]
    assert next(n["option"] for n in g["nodes"] if n["id"] == root) == "m1"
    out = [e for e in g["edges"] if e["from"] == root]
    assert sorted(e["signal"] for e in out) == ["s1", "s2"]
    assert len(g["nodes"]) == 3 and len(g["edges"]) == 2
    dot = export_controller(tree, "dot", name="fig3")
    assert dot.startswith('digraph "fig3" {') and dot.count("->") == 2


def test_export_round_trips(toy_name):
    jp, _, _ = toy_odp(toy_name)
    for tree in jp.trees:
        assert import_controller(export_controller(tree, "json")) == tree


def test_export_round_trips_warehouse():
    jp, _, _ = mini_ombdp()
    for tree in jp.trees:
        assert import_controller(export_controller(tree, "JSON")) == tree


def test_export_errors():
    with pytest.raises(ValueError, match="unknown export format"):
        export_controller(PolicyTree("a"), "yaml")
    bad = {"initial": "n0", "nodes": [{"id": "n0", "option": "a"}, {"id": "n1", "option": "b"}], "edges": []}
    with pytest.raises(PolicyError):
        import_controller(json.dumps(bad))
    bad["edges"] = [{"from": "n0", "signal": "x", "to": "n9"}]
    with pytest.raises(PolicyError):
        import_controller(json.dumps(bad))


def test_simulating_from_export_matches_tree():
    w = mini(horizon=8)
    jp, _, _ = mini_ombdp()
    graphs = [json.loads(export_controller(t, "json")) for t in jp.trees]
    for k in range(30):
        a = run_episode(w.model, w.options, jp, seed=6, index=k)
        b = run_episode_from_graphs(w.model, w.options, graphs, seed=6, index=k)
        assert a.to_jsonl() == b.to_jsonl()


def test_batch_of_one_equals_episode():
    model, options = toy("chain-cooperate")
    jp, _, _ = toy_odp("chain-cooperate")
    s = batch_stats(model, options, jp, 1, seed=12)
    assert s.mean == run_episode(model, options, jp, 12, 0).ret and s.stderr == 0.0
    with pytest.raises(ValueError):
        batch_stats(model, options, jp, 0, seed=0)


def test_deterministic_domain_has_zero_stderr():
    model, options = toy("det-counter")
    jp, rep, _ = toy_odp("det-counter")
    s = batch_stats(model, options, jp, 200, seed=0)
    assert s.stderr == 0.0 and s.mean == rep.value and s.fell_off == 0


def test_batch_is_seeded_and_counts_usage():
    model, options = toy("coin-coord")
    jp, _, _ = toy_odp("coin-coord")
    a = batch_stats(model, options, jp, 300, seed=5)
    b = batch_stats(model, options, jp, 300, seed=5)
    assert a.to_json() == b.to_json()
    # the peek option runs once per episode and is followed by exactly one call
    for usage in a.option_usage:
        assert usage.get("peek", 0) == 300
        assert usage.get("call_h", 0) + usage.get("call_t", 0) == 300
    assert np.std(a.returns, ddof=1) / math.sqrt(300) == pytest.approx(a.stderr)


def test_batch_mean_close_to_exact(toy_name):
    model, options = toy(toy_name)
    jp, rep, _ = toy_odp(toy_name)
    s = batch_stats(model, options, jp, 3000, seed=1)
    assert abs(s.mean - rep.value) <= 4 * s.stderr + 1e-12


def test_warehouse_policy_beats_baselines_in_paired_batches():
    w = mini(horizon=8)
    jp, rep, _ = mini_ombdp()
    ours = batch_stats(w.model, w.options, jp, 500, seed=3,
                       per_trace=lambda tr: deliveries(tr, w.cfg))
    for kind in BASELINES:
        base = batch_stats(w.model, w.options, hand_policy(w.options, kind, 8), 500, seed=3)
        assert ours.mean >= base.mean, kind
    assert ours.extra["small"] > 0
    assert abs(ours.mean - rep.value) <= 4 * ours.stderr


def test_on_trace_sees_every_episode():
    model, options = toy("coin-coord")
    jp, _, _ = toy_odp("coin-coord")
    seen = []
    batch_stats(model, options, jp, 7, seed=0, on_trace=lambda tr: seen.append(tr.index))
    assert seen == list(range(7))


def test_falling_off_is_logged():
    model, options = toy("det-counter")
    jp = JointPolicy([make_leaf(options, 0, "hold"), make_leaf(options, 1, "inc")])
    tr = run_episode(model, options, jp, seed=0, h=5)
    assert tr.fell_off
    assert tr.ret == evaluate_exact(model, options, jp, 5).value
    assert batch_stats(model, options, jp, 10, seed=0, h=5).fell_off == 10
