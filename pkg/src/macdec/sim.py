"""Decentralized simulation core.

Every episode owns ``n_agents + 1`` independent random streams spawned from
``SeedSequence([seed, index])``: stream 0 drives the environment, stream
``i + 1`` drives agent ``i``'s controller.  An agent's controller never sees
anything but its own stream and its own observations, which is what makes
isolated replay exact.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate

import numpy as np

from .model import ModelSpec
from .options import START, OptionSet
from .policy import JointPolicy, PolicyTree


def episode_streams(seed: int, index: int, n_agents: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence([int(seed), int(index)])
    return [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(n_agents + 1)]


def _draw(row, rng: np.random.Generator):
    """Sample the first field of a ``((x, p), ...)`` row."""
    if len(row) == 1:
        return row[0][0]
    u = rng.random()
    acc = 0.0
    for x, p in row:
        acc += p
        if u < acc:
            return x
    return row[-1][0]


class AgentController:
    """Cursor-plus-pending-symbol executor of one agent's tree or automaton.

    ``graph`` maps a node key to ``(option, {signal: node key})``; trees are
    converted on construction so exported automata drive the same code.
    """

    def __init__(self, options: OptionSet, agent: int, graph, initial, rng: np.random.Generator):
        self.options = options
        self.agent = agent
        self.graph = graph
        self.node = initial
        self.rng = rng
        self.pending = START
        self.lock = self._entry_lock()

    @classmethod
    def from_tree(cls, options: OptionSet, agent: int, tree: PolicyTree, rng) -> "AgentController":
        graph = {}
        stack = [tree]
        while stack:
            node = stack.pop()
            if id(node) in graph:
                continue
            graph[id(node)] = (node.option, {s: id(c) for s, c in node.items()})
            stack.extend(c for _, c in node.items())
        ctl = cls(options, agent, graph, id(tree), rng)
        ctl._keepalive = tree
        return ctl

    @property
    def option(self) -> str:
        return self.graph[self.node][0]

    def _spec(self):
        return self.options.get(self.agent, self.option)

    def _entry_lock(self) -> int:
        return self._spec().min_duration - 1

    def act(self) -> int:
        return _draw(self._spec().action_dist(self.pending), self.rng)

    def observe(self, obs: int) -> tuple[bool, str | None, bool]:
        """Consume an observation; returns (terminated, signal, fell_off)."""
        spec = self._spec()
        self.pending = obs
        beta = spec.beta(obs) if self.lock == 0 else 0.0
        self.lock = max(self.lock - 1, 0)
        if beta <= 0.0:
            return False, None, False
        if beta < 1.0 and self.rng.random() >= beta:
            return False, None, False
        sig = spec.signal(obs)
        nxt = self.graph[self.node][1].get(sig)
        if nxt is None:
            self.lock = self._entry_lock()
            return True, sig, True
        self.node = nxt
        self.lock = self._entry_lock()
        return True, sig, False


@dataclass
class StepRecord:
    t: int
    state: str
    actions: list[str]
    observations: list[str]
    reward: float
    options: list[str]
    terminated: list[bool]
    signals: list[str | None]
    fell_off: list[bool]

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EpisodeTrace:
    seed: int
    index: int
    steps: list[StepRecord] = field(default_factory=list)
    final_state: str = ""
    ret: float = 0.0
    discount: float = 1.0

    @property
    def fell_off(self) -> bool:
        return any(any(s.fell_off) for s in self.steps)

    def to_jsonl(self) -> str:
        import json

        head = {"seed": self.seed, "index": self.index, "return": self.ret,
                "final_state": self.final_state, "steps": len(self.steps)}
        lines = [json.dumps(head)] + [json.dumps(s.to_json()) for s in self.steps]
        return "\n".join(lines) + "\n"


class _Env:
    """Cumulative-probability tables for fast sampling from T and O rows."""

    def __init__(self, model: ModelSpec):
        self.model = model
        self._t: dict = {}
        self._o: dict = {}

    def _cum(self, row):
        xs = [x for x, _ in row]
        cs = list(accumulate(p for _, p in row))
        return xs, cs

    def next_state(self, s: int, a: int, rng) -> int:
        key = (s, a)
        entry = self._t.get(key)
        if entry is None:
            entry = self._t[key] = self._cum(self.model.t_row(s, a))
        xs, cs = entry
        if len(xs) == 1:
            return xs[0]
        i = bisect_right(cs, rng.random() * cs[-1])
        return xs[min(i, len(xs) - 1)]

    def observation(self, a: int, s2: int, rng) -> int:
        key = (a, s2)
        entry = self._o.get(key)
        if entry is None:
            entry = self._o[key] = self._cum(self.model.o_row(a, s2))
        xs, cs = entry
        if len(xs) == 1:
            return xs[0]
        i = bisect_right(cs, rng.random() * cs[-1])
        return xs[min(i, len(xs) - 1)]


def _sample_b0(model: ModelSpec, rng) -> int:
    support = np.flatnonzero(model.b0)
    if len(support) == 1:
        return int(support[0])
    row = [(int(s), float(model.b0[s])) for s in support]
    return _draw(row, rng)


def run(
    model: ModelSpec,
    options: OptionSet,
    controllers: list[AgentController],
    env_rng: np.random.Generator,
    h: int,
    env: _Env | None = None,
    trace: EpisodeTrace | None = None,
) -> tuple[float, bool, int]:
    """Step controllers in lockstep for ``h`` primitive steps; returns (return, fell_off, final state)."""
    env = env or _Env(model)
    n = model.n_agents
    radices = [len(a) for a in model.actions]
    s = _sample_b0(model, env_rng)
    ret = 0.0
    disc = 1.0
    fell_any = False
    for t in range(h):
        acts = [c.act() for c in controllers]
        a = 0
        for ai, r in zip(acts, radices):
            a = a * r + ai
        r = float(model.R[s, a])
        ret += disc * r
        disc *= model.discount
        opts_before = [c.option for c in controllers] if trace is not None else None
        s2 = env.next_state(s, a, env_rng)
        o = env.observation(a, s2, env_rng)
        obs = model.joint_observation(o)
        results = [c.observe(obs[i]) for i, c in enumerate(controllers)]
        # exhausting a tree only matters if another option is needed within the horizon
        if t < h - 1 and any(x[2] for x in results):
            fell_any = True
        if trace is not None:
            trace.steps.append(StepRecord(
                t=t,
                state=model.states[s],
                actions=[model.actions[i][x] for i, x in enumerate(acts)],
                observations=[model.observations[i][x] for i, x in enumerate(obs)],
                reward=r,
                options=opts_before,
                terminated=[x[0] for x in results],
                signals=[x[1] for x in results],
                fell_off=[x[2] and t < h - 1 for x in results],
            ))
        s = s2
    if trace is not None:
        trace.final_state = model.states[s]
        trace.ret = ret
        trace.discount = model.discount
    return ret, fell_any, s


def make_controllers(options: OptionSet, jp: JointPolicy, streams) -> list[AgentController]:
    return [AgentController.from_tree(options, i, t, streams[i + 1]) for i, t in enumerate(jp.trees)]


def simulate_returns(model: ModelSpec, options: OptionSet, jp: JointPolicy, h: int, n: int, seed: int,
                     start_index: int = 0) -> np.ndarray:
    env = _Env(model)
    graphs = [AgentController.from_tree(options, i, t, None) for i, t in enumerate(jp.trees)]
    out = np.empty(n)
    for k in range(n):
        streams = episode_streams(seed, start_index + k, model.n_agents)
        ctls = [AgentController(options, g.agent, g.graph, g.node, streams[i + 1]) for i, g in enumerate(graphs)]
        out[k], _, _ = run(model, options, ctls, streams[0], h, env)
    return out
