"""Decentralized execution: seeded episodes, batch statistics, replay and controller export."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .model import ModelSpec
from .options import START, OptionSet
from .policy import JointPolicy, PolicyError, PolicyTree, _check_inputs, _resolve_horizon
from .sim import AgentController, EpisodeTrace, StepRecord, _Env, episode_streams, make_controllers, run

__all__ = [
    "run_episode",
    "batch_stats",
    "BatchSummary",
    "replay_agent",
    "check_replay",
    "export_controller",
    "import_controller",
    "controller_graph",
    "run_episode_from_graphs",
    "EpisodeTrace",
    "StepRecord",
]


def run_episode(
    model: ModelSpec,
    options: OptionSet,
    jp: JointPolicy,
    seed: int,
    index: int = 0,
    h: int | None = None,
) -> EpisodeTrace:
    """One decentralized episode; deterministic in ``(seed, index)``."""
    _check_inputs(model, options, jp)
    h, _ = _resolve_horizon(model, h)
    streams = episode_streams(seed, index, model.n_agents)
    trace = EpisodeTrace(seed=seed, index=index)
    run(model, options, make_controllers(options, jp, streams), streams[0], h, trace=trace)
    return trace


@dataclass
class BatchSummary:
    n: int
    mean: float
    stderr: float
    returns: list[float] = field(repr=False, default_factory=list)
    fell_off: int = 0
    option_usage: list[dict[str, int]] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "episodes": self.n,
            "mean": self.mean,
            "stderr": self.stderr,
            "fell_off": self.fell_off,
            "option_usage": self.option_usage,
            **self.extra,
        }


def batch_stats(
    model: ModelSpec,
    options: OptionSet,
    jp: JointPolicy,
    n_episodes: int,
    seed: int,
    h: int | None = None,
    *,
    per_trace: Callable[[EpisodeTrace], Mapping[str, float]] | None = None,
    on_trace: Callable[[EpisodeTrace], None] | None = None,
) -> BatchSummary:
    """Mean and standard error of returns over episodes ``0..n-1``, plus option-usage counts.

    ``per_trace`` may return named counts (e.g. deliveries) that are summed
    over the batch; ``on_trace`` sees every trace (e.g. to write JSONL).
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    _check_inputs(model, options, jp)
    h, _ = _resolve_horizon(model, h)
    env = _Env(model)
    returns = np.empty(n_episodes)
    usage = [Counter() for _ in range(model.n_agents)]
    totals: Counter = Counter()
    fell = 0
    for k in range(n_episodes):
        streams = episode_streams(seed, k, model.n_agents)
        trace = EpisodeTrace(seed=seed, index=k)
        returns[k], fell_any, _ = run(model, options, make_controllers(options, jp, streams), streams[0], h,
                                      env, trace=trace)
        fell += int(fell_any)
        for step in trace.steps:
            for i, (opt, term) in enumerate(zip(step.options, step.terminated)):
                if step.t == 0:
                    usage[i][opt] += 1
                if term and step.t + 1 < len(trace.steps):
                    usage[i][trace.steps[step.t + 1].options[i]] += 1
        if per_trace is not None:
            totals.update(per_trace(trace))
        if on_trace is not None:
            on_trace(trace)
    if n_episodes > 1 and not np.all(returns == returns[0]):
        stderr = float(np.std(returns, ddof=1) / math.sqrt(n_episodes))
    else:
        stderr = 0.0
    return BatchSummary(
        n=n_episodes,
        mean=float(returns.mean()) if not np.all(returns == returns[0]) else float(returns[0]),
        stderr=stderr,
        returns=returns.tolist(),
        fell_off=fell,
        option_usage=[dict(sorted(c.items())) for c in usage],
        extra=dict(totals),
    )


# ---------------------------------------------------------------------------
# replay


def replay_agent(options: OptionSet, agent: int, tree: PolicyTree, trace: EpisodeTrace, model: ModelSpec) -> list[str]:
    """Actions agent ``agent`` takes when fed only its own logged observations.

    The controller gets the agent's own random stream for the episode, so
    the result must equal the logged actions exactly.
    """
    streams = episode_streams(trace.seed, trace.index, model.n_agents)
    ctl = AgentController.from_tree(options, agent, tree, streams[agent + 1])
    obs_idx = {o: j for j, o in enumerate(model.observations[agent])}
    act_names = model.actions[agent]
    out = []
    for step in trace.steps:
        out.append(act_names[ctl.act()])
        ctl.observe(obs_idx[step.observations[agent]])
    return out


def check_replay(model: ModelSpec, options: OptionSet, jp: JointPolicy, trace: EpisodeTrace) -> bool:
    return all(
        replay_agent(options, i, tree, trace, model) == [s.actions[i] for s in trace.steps]
        for i, tree in enumerate(jp.trees)
    )


# ---------------------------------------------------------------------------
# controller export
#
# JSON automaton schema:
#   {"initial": "n0",
#    "nodes": [{"id": "n0", "option": "<name>"}, ...],        # pre-order, children by sorted signal
#    "edges": [{"from": "n0", "signal": "<label>", "to": "n1"}, ...]}


def controller_graph(tree: PolicyTree) -> dict:
    nodes: list[dict] = []
    edges: list[dict] = []

    def walk(node: PolicyTree) -> str:
        nid = f"n{len(nodes)}"
        nodes.append({"id": nid, "option": node.option})
        for sig, child in node.items():
            edge = {"from": nid, "signal": sig, "to": None}
            edges.append(edge)
            edge["to"] = walk(child)
        return nid

    walk(tree)
    return {"initial": "n0", "nodes": nodes, "edges": edges}


def _dot_id(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_controller(tree: PolicyTree, fmt: str = "json", name: str = "controller") -> str:
    """Finite-state controller text for one agent's tree: ``json`` or ``dot``."""
    fmt = fmt.lower()
    graph = controller_graph(tree)
    if fmt == "json":
        return json.dumps(graph, indent=2, sort_keys=True) + "\n"
    if fmt == "dot":
        lines = [f"digraph {_dot_id(name)} {{", "  rankdir=TB;"]
        for node in graph["nodes"]:
            shape = "doublecircle" if node["id"] == graph["initial"] else "circle"
            lines.append(f"  {node['id']} [label={_dot_id(node['option'])}, shape={shape}];")
        for e in graph["edges"]:
            lines.append(f"  {e['from']} -> {e['to']} [label={_dot_id(e['signal'])}];")
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown export format {fmt!r}; use 'json' or 'dot'")


def import_controller(text: str) -> PolicyTree:
    """Rebuild a tree from the JSON automaton.  Every non-initial node needs exactly one parent."""
    data = json.loads(text)
    nodes = {n["id"]: n["option"] for n in data["nodes"]}
    out_edges: dict[str, list[tuple[str, str]]] = {k: [] for k in nodes}
    parents: Counter = Counter()
    for e in data["edges"]:
        if e["from"] not in nodes or e["to"] not in nodes:
            raise PolicyError(f"edge {e} references an unknown node")
        out_edges[e["from"]].append((e["signal"], e["to"]))
        parents[e["to"]] += 1
    if any(parents[k] != (0 if k == data["initial"] else 1) for k in nodes):
        raise PolicyError("automaton is not a tree rooted at the initial node")

    def build(nid: str) -> PolicyTree:
        return PolicyTree(nodes[nid], {sig: build(to) for sig, to in out_edges[nid]})

    return build(data["initial"])


def run_episode_from_graphs(
    model: ModelSpec,
    options: OptionSet,
    graphs: list[dict],
    seed: int,
    index: int = 0,
    h: int | None = None,
) -> EpisodeTrace:
    """Run exported automata directly (not via trees); must match run_episode on the source trees."""
    h, _ = _resolve_horizon(model, h)
    streams = episode_streams(seed, index, model.n_agents)
    ctls = []
    for i, g in enumerate(graphs):
        table = {n["id"]: (n["option"], {}) for n in g["nodes"]}
        for e in g["edges"]:
            table[e["from"]][1][e["signal"]] = e["to"]
        ctls.append(AgentController(options, i, table, g["initial"], streams[i + 1]))
    trace = EpisodeTrace(seed=seed, index=index)
    run(model, options, ctls, streams[0], h, trace=trace)
    return trace
