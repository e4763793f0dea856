from dataclasses import replace
from itertools import combinations, product
from pathlib import Path

import pytest

from macdec.domains import build_warehouse, mini_config
from macdec.domains.warehouse import (
    BASELINES,
    SCENARIOS,
    WarehouseConfig,
    WarehouseError,
    count_states,
    emit_config,
    hand_policy,
    large_pickups,
    option_names,
    parse_config,
    parse_state_name,
    split_start,
    state_name,
    tiny_config,
    validate_config,
)
from macdec.executor import batch_stats, run_episode
from macdec.model import transition, validate
from macdec.options import ROOT, validate_options
from macdec.policy import check_joint, evaluate_exact
from conftest import mini

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def brute_count(cfg):
    """Independent count: every assignment of robots to cells and boxes to locations, filtered."""
    n = cfg.n_robots
    robots_sets = []
    for size, deps in cfg.boxes:
        k = 2 if size == "large" else 1
        robots_sets.append([("depot", d) for d in set(deps)] + [("held", set(c)) for c in combinations(range(n), k)]
                           + [("goal", None)])
    lights = 3 if cfg.scenario == "GLOBAL_SIGNAL" else 1
    total = 0
    for cells in product(cfg.cells, repeat=n):
        for locs in product(*robots_sets):
            holders = [r for kind, who in locs if kind == "held" for r in who]
            if len(holders) != len(set(holders)):
                continue
            if any(kind == "held" and len({cells[r] for r in who}) > 1 for kind, who in locs):
                continue
            total += lights
    return total


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_option_counts_per_scenario(scenario):
    w = mini(scenario)
    expect = {"NO_COMM": 6, "LOCAL_COMM": 10, "GLOBAL_SIGNAL": 11}[scenario]
    assert len(option_names(scenario)) == expect
    for i in range(w.cfg.n_robots):
        assert len(w.options.agents[i]) == expect


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_generated_instances_validate(scenario):
    w = mini(scenario)
    assert validate(w.model) == []
    assert validate_options(w.model, w.options) == []


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_drop_and_goal_only_while_holding(scenario):
    opts = mini(scenario).options
    drop, go_g = opts.get(0, "drop"), opts.get(0, "go-G")
    assert not drop.root and not go_g.root
    # drop follows arrival at the goal with a box; go-G follows a successful pickup
    assert {p for p, _ in drop.initiation} == {"go-G"}
    assert go_g.initiation <= {("pick-S", "held"), ("pick-L", "held")}
    # nothing but go-G is allowed right after a successful pickup
    for pick in ("pick-S", "pick-L"):
        assert opts.successors(0, (pick, "held")) == ("go-G",)


def test_pickups_follow_matching_sightings():
    opts = mini().options
    for dep in ("go-D1", "go-D2"):
        assert opts.successors(0, (dep, "none")) and "pick-S" not in opts.successors(0, (dep, "none"))
    assert "pick-S" in opts.successors(0, ("go-D1", "small"))
    assert "pick-L" in opts.successors(0, ("go-D1", "large"))
    assert "pick-L" not in opts.successors(0, ("go-D1", "small"))


def test_wait_and_depot_moves_from_waiting_room_only():
    opts = mini("LOCAL_COMM").options
    assert opts.successors(0, ROOT) == ("go-W",)
    at_w = {"go-W", "wait", "send-1", "send-2"}
    for name in ("go-D1", "go-D2", "wait", "send-1", "send-2"):
        assert {p for p, _ in opts.get(0, name).initiation} <= at_w, name
    assert "wait" not in opts.successors(0, ("wait", "robot"))


def test_depot_switch_relaxes_scenario_two():
    w = build_warehouse(mini_config("LOCAL_COMM", depot_from_waiting_only=False, horizon=4))
    assert "go-D1" in w.options.successors(0, ROOT)


def test_light_off_moves_from_waiting_room_only():
    opts = mini("GLOBAL_SIGNAL").options
    for name in ("off-go-D1", "off-go-D2"):
        assert {p for p, _ in opts.get(0, name).initiation} == {"go-W"}
    for light in ("light-blue", "light-red"):
        assert {p for p, _ in opts.get(0, light).initiation} <= {"go-D1", "go-D2", "off-go-D1", "off-go-D2"}
    assert set(opts.successors(0, ROOT)) == {"go-D1", "go-D2", "go-W"}


def _joint(m, *names):
    return m.joint_action_index(tuple(m.actions[i].index(a) for i, a in enumerate(names)))


def test_lone_large_pickup_fails():
    m = mini().model
    s = m.state_index("D1-W/D1,D1,D2/off")
    for s2 in transition(m, s, _joint(m, "pick_L", "move_D2")):
        assert parse_state_name(m.states[s2])[1][1] == ("d", "D1")


def test_joint_large_pickup_lifts():
    m = mini().model
    s = m.state_index("D1-D1/D1,D1,D2/off")
    out = {m.states[k]: p for k, p in transition(m, s, _joint(m, "pick_L", "pick_L")).items()}
    assert out == {"D1-D1/D1,r0+r1,D2/off": pytest.approx(1.0)}


def test_large_box_reaches_goal_only_with_two_carriers():
    # forward reachability: any transition that delivers the large box starts with both robots carrying it
    w = mini()
    m = w.model
    for s, name in enumerate(m.states):
        before = parse_state_name(name)
        if before[1][1] == ("g",):
            continue
        for a in range(m.n_joint_actions):
            for s2 in transition(m, s, a):
                after = parse_state_name(m.states[s2])
                if after[1][1] == ("g",):
                    assert before[1][1] == ("c", (0, 1)), (name, m.states[s2])


@pytest.mark.parametrize("cfg", [
    mini_config(), mini_config("LOCAL_COMM"), mini_config("GLOBAL_SIGNAL"), tiny_config(),
    replace(tiny_config(), boxes=()),
])
def test_state_counts_match_independent_enumeration(cfg):
    assert count_states(cfg) == brute_count(cfg)


def test_state_count_examples():
    assert count_states(WarehouseConfig(n_robots=2, start=(("G",), ("G",)), boxes=())) == 81
    assert count_states(mini_config()) == len(mini().model.states) == 720
    assert count_states(mini_config("GLOBAL_SIGNAL")) == 2160
    full = WarehouseConfig()
    assert count_states(full) == brute_count(full)
    capped = replace(full, max_states=1000)
    with pytest.raises(WarehouseError, match=str(count_states(full))):
        build_warehouse(capped)


def test_config_round_trip_and_bundled_files():
    for cfg in (mini_config(), tiny_config("GLOBAL_SIGNAL"), WarehouseConfig()):
        assert parse_config(emit_config(cfg)) == cfg
    for path in sorted(CONFIGS.glob("*.txt")):
        cfg = parse_config(path.read_text())
        assert validate_config(cfg) == []
    assert parse_config((CONFIGS / "mini-s1.txt").read_text()) == mini_config()


def test_config_errors():
    with pytest.raises(WarehouseError, match="line 2"):
        parse_config("robots: 2\nbogus line\n")
    assert any("scenario" in v for v in validate_config(replace(mini_config(), scenario="X")))
    lone = replace(mini_config(), n_robots=1, start=(("W",),))
    assert any("large box needs" in v for v in validate_config(lone))
    with pytest.raises(WarehouseError):
        build_warehouse(replace(mini_config(), goal="D1"))


def test_lone_robot_with_large_box_still_generates():
    lone = replace(mini_config(horizon=4), n_robots=1, start=(("W",),))
    w = build_warehouse(lone)
    assert validate_options(w.model, w.options) == []


def test_state_names_round_trip():
    w = mini()
    for st in w.states[:50] + w.states[-50:]:
        assert parse_state_name(state_name(st)) == st


def test_hand_baselines_are_legal_and_deterministic_in_start():
    w = mini(horizon=8)
    for kind in ("split",) + BASELINES:
        jp = hand_policy(w.options, kind, 8)
        assert check_joint(w.options, jp) == []
        rep = evaluate_exact(w.model, w.options, jp, 8)
        assert rep.fall_off == 0.0
    tr = run_episode(w.model, w.options, hand_policy(w.options, "split", 8), seed=0)
    assert split_start(tr)
    tr = run_episode(w.model, w.options, hand_policy(w.options, "both-D1", 8), seed=0)
    assert not split_start(tr)


def test_split_policy_colocates_before_large_lift():
    w = mini(horizon=10)
    jp = hand_policy(w.options, "split", 10)
    lifts = []
    batch_stats(w.model, w.options, jp, 100, seed=2,
                on_trace=lambda tr: lifts.extend(large_pickups(tr, w.cfg)))
    assert lifts and all(ok for _, ok in lifts)
    never = hand_policy(w.options, "never-help", 10)
    none = []
    batch_stats(w.model, w.options, never, 50, seed=2, on_trace=lambda tr: none.extend(large_pickups(tr, w.cfg)))
    assert none == []
