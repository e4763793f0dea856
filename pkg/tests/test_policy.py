import itertools
import math

import numpy as np
import pytest

from macdec.model import build_model
from macdec.options import OptionSet, make_option
from macdec.policy import (
    JointEvaluator,
    JointPolicy,
    PolicyError,
    PolicyTree,
    attach,
    check_joint,
    check_tree,
    evaluate_exact,
    evaluate_mc,
    guaranteed_steps,
    make_leaf,
    root_applicable,
)
from oracles import TrajectoryOracle, enumerate_trees, to_policy_tree
from conftest import mini, toy, toy_odp


def single_state(gamma=1.0, horizon=3):
    model = build_model(["s"], [["a"]], [["o"]], [1.0], np.ones((1, 1, 1)), np.ones((1, 1, 1)),
                        np.ones((1, 1)), horizon=horizon, discount=gamma)
    m = make_option(model, 0, "m", default_action="a", default_termination=1.0, default_signal="x",
                    root=True, initiation=[("m", "x")])
    return model, OptionSet(model, [[m]])


def test_leaves_and_attach():
    _, options = toy("fig3-shape")
    leaf = make_leaf(options, 0, "m1")
    assert leaf.depth() == 1 and dict(leaf.children) == {}
    assert make_leaf(options, 0, "m2").children == {}
    tree = attach(options, 0, "m1", {"s1": make_leaf(options, 0, "m1"), "s2": make_leaf(options, 0, "m2")})
    assert tree.depth() == 2 and tree.option == "m1"
    assert tree.child("s2").option == "m2"
    assert attach(options, 0, "m2", {}) == make_leaf(options, 0, "m2")
    with pytest.raises(PolicyError, match="initiation"):
        attach(options, 0, "m1", {"s1": make_leaf(options, 0, "m2")})
    with pytest.raises(PolicyError, match="not a terminal signal"):
        attach(options, 0, "m1", {"s3": make_leaf(options, 0, "m1")})


def test_non_root_leaf_is_rejected_as_top_level():
    w = mini()
    leaf = make_leaf(w.options, 0, "drop")
    assert not root_applicable(w.options, 0, leaf)
    assert any("root" in v for v in check_tree(w.options, 0, leaf))
    assert check_tree(w.options, 0, leaf, top_level=False) == []


def test_guaranteed_steps_chains():
    model, options = single_state()
    leaf = make_leaf(options, 0, "m")
    assert guaranteed_steps(options, 0, leaf) == 1
    chain = attach(options, 0, "m", {"x": attach(options, 0, "m", {"x": leaf})})
    assert guaranteed_steps(options, 0, chain) == 3


def test_guaranteed_steps_min_duration_path_sum():
    _, options = toy("det-counter")
    inc, hold = make_leaf(options, 0, "inc"), make_leaf(options, 0, "hold")
    # inc lasts at least 2, hold 1: the shortest root-to-leaf path decides
    tree = attach(options, 0, "inc", {"done": attach(options, 0, "hold", {"done": inc})})
    assert guaranteed_steps(options, 0, tree) == 2 + 1 + 2
    assert guaranteed_steps(options, 0, attach(options, 0, "inc", {"done": hold})) == 3


def test_value_equation_examples():
    model, options = single_state(horizon=3)
    jp = JointPolicy([make_leaf(options, 0, "m")])
    assert evaluate_exact(model, options, jp).value == pytest.approx(3.0, abs=1e-12)
    model, options = single_state(gamma=0.5, horizon=2)
    assert evaluate_exact(model, options, jp).value == pytest.approx(1.5, abs=1e-12)


def test_horizon_and_arity_errors():
    model, options = single_state()
    jp = JointPolicy([make_leaf(options, 0, "m")])
    with pytest.raises(PolicyError):
        evaluate_exact(model, options, jp, 0)
    with pytest.raises(PolicyError):
        evaluate_exact(model, options, JointPolicy([]))


def test_truncation_bound_reported():
    model, options = single_state(gamma=0.5, horizon=None)
    jp = JointPolicy([make_leaf(options, 0, "m")])
    rep = evaluate_exact(model, options, jp, 4)
    assert rep.value == pytest.approx(1 + 0.5 + 0.25 + 0.125)
    assert rep.truncation_error == pytest.approx(0.5 ** 4 * 1 / (1 - 0.5))
    with pytest.raises(PolicyError, match="infinite-horizon"):
        evaluate_exact(model, options, jp)


@pytest.mark.parametrize("name", ["chain-cooperate", "coin-coord", "fig3-shape", "det-counter"])
def test_exact_matches_trajectory_oracle_on_depth2_trees(name):
    model, options = toy(name)
    h = model.horizon
    per_agent = [enumerate_trees(options, i, 2) for i in range(model.n_agents)]
    oracle = TrajectoryOracle(model, options)
    for combo in itertools.product(*per_agent):
        jp = JointPolicy([to_policy_tree(t) for t in combo])
        rep = evaluate_exact(model, options, jp, h)
        expect = oracle.value(combo, h, raise_on_fall=False)
        assert rep.value == pytest.approx(expect, abs=1e-9)
        assert rep.fall_off == pytest.approx(oracle.fall_mass, abs=1e-9)


def test_fall_off_repeats_the_leaf_option():
    model, options = toy("det-counter")
    jp = JointPolicy([make_leaf(options, 0, "hold"), make_leaf(options, 1, "inc")])
    rep = evaluate_exact(model, options, jp, 5)
    # agent 1 keeps incrementing: counter 0,1,2,3,4 -> rewards -0.5,0.5,1.5,2.5,3.5
    assert rep.value == pytest.approx(7.5)
    assert rep.fall_off == pytest.approx(1.0)


def test_no_fall_off_when_trees_are_long_enough(toy_name):
    model, options = toy(toy_name)
    jp, rep, _ = toy_odp(toy_name)
    assert all(guaranteed_steps(options, i, t) >= model.horizon for i, t in enumerate(jp.trees))
    assert rep.fall_off == 0.0


def test_mass_conservation_and_unreached_nodes():
    model, options = toy("fig3-shape")
    jp, rep, _ = toy_odp("fig3-shape")
    assert len(rep.mass_by_depth) == model.horizon
    assert all(abs(m - 1.0) <= 1e-9 for m in rep.mass_by_depth)
    # the init state is never re-entered, so every node is reachable; a padded tree is not
    assert rep.unreached_nodes == [0]


def test_joint_evaluator_agrees_with_forward(toy_name):
    model, options = toy(toy_name)
    jp, rep, _ = toy_odp(toy_name)
    ev = JointEvaluator(model, options)
    assert ev.value_b0(jp.trees, model.horizon) == pytest.approx(rep.value, abs=1e-12)
    for s in range(model.n_states):
        single = evaluate_exact(model, options, jp, start_states=[s])
        assert ev.value(jp.trees, s, model.horizon) == pytest.approx(
            single.per_state[model.states[s]], abs=1e-12)


def test_mc_deterministic_cases():
    model, options = toy("det-counter")
    jp, rep, _ = toy_odp("det-counter")
    assert evaluate_mc(model, options, jp, n_samples=50, seed=3) == (rep.value, 0.0)


def test_mc_same_seed_same_estimate():
    model, options = toy("chain-cooperate")
    jp, _, _ = toy_odp("chain-cooperate")
    assert evaluate_mc(model, options, jp, n_samples=500, seed=9) == evaluate_mc(model, options, jp, n_samples=500, seed=9)
    assert evaluate_mc(model, options, jp, n_samples=500, seed=9) != evaluate_mc(model, options, jp, n_samples=500, seed=10)


def test_policy_json_round_trip_and_stable_order():
    _, options = toy("fig3-shape")
    jp, _, _ = toy_odp("fig3-shape")
    text = jp.dumps()
    assert JointPolicy.loads(text) == jp
    assert JointPolicy.loads(text).dumps() == text
    assert check_joint(options, jp) == []


def test_structural_equality_ignores_sharing():
    shared = PolicyTree("b")
    a = PolicyTree("a", {"x": shared, "y": shared})
    b = PolicyTree("a", {"x": PolicyTree("b"), "y": PolicyTree("b")})
    assert a == b and hash(a) == hash(b)
    assert a != PolicyTree("a", {"x": shared, "y": PolicyTree("c")})
    assert len({a, b}) == 1


def test_deep_shared_trees_hash_quickly():
    node = PolicyTree("leaf")
    for _ in range(200):
        node = PolicyTree("n", {"p": node, "q": node, "r": node})
    assert len(node.distinct_nodes()) == 201
    assert hash(node) == hash(node)


def test_per_step_reward_marginals_match_sampled_traces():
    # occupancy consistency: mean reward at step t from simulation vs V(t+1) - V(t) exactly
    from macdec.executor import batch_stats, run_episode

    model, options = toy("chain-cooperate")
    jp, _, _ = toy_odp("chain-cooperate")
    h = model.horizon
    exact = [evaluate_exact(model, options, jp, k).value for k in range(1, h + 1)]
    per_step = np.diff([0.0] + exact)
    n = 4000
    sums = np.zeros(h)
    sq = np.zeros(h)
    for k in range(n):
        tr = run_episode(model, options, jp, seed=5, index=k)
        r = np.array([s.reward for s in tr.steps])
        sums += r
        sq += r * r
    mean = sums / n
    se = np.sqrt(np.maximum(sq / n - mean ** 2, 0) / n)
    assert np.all(np.abs(mean - per_step) <= 4 * se + 1e-12)
    assert batch_stats(model, options, jp, 1, seed=5).mean == run_episode(model, options, jp, 5, 0).ret
