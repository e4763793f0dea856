import json
from pathlib import Path

import pytest

from macdec.cli import EXIT_CAP, EXIT_INVALID, EXIT_OK, main, named_seed
from macdec.domains import gen_toy
from macdec.policy import JointPolicy, make_leaf
from oracles import brute_force_optimum

ROOT = Path(__file__).resolve().parent.parent


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.fixture
def coin(tmp_path, capsys):
    d = tmp_path / "coin"
    assert run(capsys, "gen", "coin-coord", "--out", d)[0] == EXIT_OK
    return d


def test_gen_writes_files_and_manifest(coin):
    assert {p.name for p in coin.iterdir()} == {"model.txt", "options.txt", "manifest.json"}
    man = json.loads((coin / "manifest.json").read_text())
    assert man["command"] == "gen" and man["parameters"] == {"toy": "coin-coord"}


def test_gen_warehouse_config_with_scenario(tmp_path, capsys):
    rc, out, _ = run(capsys, "gen", ROOT / "configs" / "mini-s1.txt", "--scenario", 2, "--out", tmp_path, "--json")
    assert rc == EXIT_OK and json.loads(out)["states"] == 720
    assert "scenario: LOCAL_COMM" in (tmp_path / "config.txt").read_text()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert len(next(iter(man["inputs"].values()))) == 64


def test_solve_coin_matches_oracle(coin, tmp_path, capsys):
    out = tmp_path / "sol"
    rc, text, _ = run(capsys, "solve", coin / "model.txt", coin / "options.txt", "--algo", "odp",
                      "--horizon", 2, "--out", out, "--json")
    assert rc == EXIT_OK
    model, options = gen_toy("coin-coord")
    _, best, _ = brute_force_optimum(model, options, 2)
    assert json.loads(text)["value"] == pytest.approx(best, abs=1e-9)
    report = json.loads((out / "report.json").read_text())
    assert report["report"]["value"] == pytest.approx(best, abs=1e-9)
    assert JointPolicy.loads((out / "policy.json").read_text())


def test_eval_exact_and_mc_agree(coin, tmp_path, capsys):
    out = tmp_path / "sol"
    run(capsys, "solve", coin / "model.txt", coin / "options.txt", "--algo", "odp", "--out", out)
    rc, text, _ = run(capsys, "eval", coin / "model.txt", coin / "options.txt", out / "policy.json",
                      "--exact", "--mc", 100000, "--seed", 3, "--json")
    assert rc == EXIT_OK
    got = json.loads(text)
    assert got["mc"]["seed"] == named_seed(3, "mc")
    assert abs(got["mc"]["mean"] - got["exact"]["value"]) <= 3 * got["mc"]["stderr"]


def test_sim_writes_jsonl(coin, tmp_path, capsys):
    out = tmp_path / "sol"
    run(capsys, "solve", coin / "model.txt", coin / "options.txt", "--algo", "odp", "--out", out)
    trace = tmp_path / "t.jsonl"
    rc, text, _ = run(capsys, "sim", coin / "model.txt", coin / "options.txt", out / "policy.json",
                      "--episodes", 20, "--trace", trace, "--json")
    assert rc == EXIT_OK
    summary = json.loads(text)
    assert summary["episodes"] == 20 and summary["fell_off"] == 0
    lines = [json.loads(x) for x in trace.read_text().splitlines()]
    heads = [x for x in lines if "return" in x]
    assert [x["index"] for x in heads] == list(range(20))
    assert {x["seed"] for x in heads} == {summary["seed"]}
    assert len(lines) == 20 * (1 + 2)  # a header plus one line per step at h=2


def test_export_leaf_dot(tmp_path, capsys):
    _, options = gen_toy("fig3-shape")
    pol = tmp_path / "leaf.json"
    pol.write_text(JointPolicy([make_leaf(options, 0, "m1")]).dumps())
    dot = tmp_path / "leaf.dot"
    rc, _, _ = run(capsys, "export", pol, "--format", "dot", "--out", dot)
    assert rc == EXIT_OK
    text = dot.read_text()
    assert text.count("[label=") == 1 and "->" not in text
    rc, out, _ = run(capsys, "export", pol, "--format", "json")
    assert json.loads(out)["nodes"] == [{"id": "n0", "option": "m1"}]


def test_exit_code_for_invalid_input(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("agents: 1\nstates: s\nwhat is this\n")
    rc, _, err = run(capsys, "solve", bad, bad, "--out", tmp_path / "o")
    assert rc == EXIT_INVALID and str(bad) in err and "line" in err
    rc, _, err = run(capsys, "gen", "no-such-toy", "--out", tmp_path / "o")
    assert rc == EXIT_INVALID


def test_exit_code_for_cap(coin, tmp_path, capsys):
    rc, _, err = run(capsys, "solve", coin / "model.txt", coin / "options.txt", "--algo", "odp",
                     "--cap", 2, "--out", tmp_path / "o")
    assert rc == EXIT_CAP and "cap" in err


def test_policy_not_matching_options_rejected(coin, tmp_path, capsys):
    _, options = gen_toy("fig3-shape")
    pol = tmp_path / "p.json"
    pol.write_text(JointPolicy([make_leaf(options, 0, "m1")]).dumps())
    rc, _, _ = run(capsys, "eval", coin / "model.txt", coin / "options.txt", pol)
    assert rc == EXIT_INVALID


def test_reruns_are_byte_identical(tmp_path, capsys):
    cfg = ROOT / "configs" / "mini-s1.txt"
    gen = tmp_path / "gen"
    run(capsys, "gen", cfg, "--out", gen)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        rc, _, _ = run(capsys, "solve", gen / "model.txt", gen / "options.txt", "--horizon", 6,
                       "--max-trees", 2, "--seed", 5, "--out", out)
        assert rc == EXIT_OK
        outs.append(out)
    for name in ("policy.json", "report.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    m = json.loads((outs[0] / "manifest.json").read_text())
    assert m["seed"] == 5 and m["streams"]["sampling"] == named_seed(5, "sampling")


def test_named_streams_differ():
    assert len({named_seed(0, n) for n in ("sampling", "mc", "episodes")}) == 3
    assert named_seed(1, "mc") == named_seed(1, "mc")
