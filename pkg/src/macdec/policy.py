"""Option-policy trees, joint policies and their exact evaluation.

Execution semantics shared by every evaluator and the simulator, per
primitive step:

1. each agent draws a primitive action from its current option's internal
   policy at its pending symbol (START before the first observation);
2. the environment pays R(s, a), moves to s' ~ T and emits o ~ O(a, s');
3. each agent whose option has run at least ``min_duration`` steps
   terminates with probability beta(o_i); on termination it follows the
   child edge labelled signal(o_i), or, with no such child (fall-off),
   restarts the same option;
4. o_i becomes the pending symbol for the next action choice.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .model import TOL, ModelSpec
from .options import ROOT, START, OptionError, OptionSet


class PolicyError(ValueError):
    pass


class PolicyTree:
    """Immutable option tree; children are keyed by terminal signal.

    Equality and hashing are structural.  Subtrees are shared freely.
    """

    __slots__ = ("option", "_items", "_children", "_key", "_hash")

    def __init__(self, option: str, children: Mapping[str, "PolicyTree"] | Iterable = ()):
        items = tuple(sorted(dict(children).items()))
        for sig, child in items:
            if not isinstance(child, PolicyTree):
                raise TypeError(f"child for signal {sig!r} is not a PolicyTree")
        self.option = option
        self._items = items
        self._children = dict(items)
        # children compare by their own cached hash first, so keys stay shallow
        self._key = (option, items)
        self._hash = hash((option, tuple((sig, child._hash) for sig, child in items)))

    @property
    def children(self) -> Mapping[str, "PolicyTree"]:
        return self._children

    def child(self, signal: str) -> "PolicyTree | None":
        return self._children.get(signal)

    def items(self) -> tuple[tuple[str, "PolicyTree"], ...]:
        return self._items

    def is_leaf(self) -> bool:
        return not self._items

    def depth(self) -> int:
        return 1 + max((c.depth() for _, c in self._items), default=0)

    def nodes(self) -> Iterator["PolicyTree"]:
        """Pre-order walk; shared subtrees are visited once per occurrence."""
        yield self
        for _, c in self._items:
            yield from c.nodes()

    def distinct_nodes(self) -> list["PolicyTree"]:
        """Node objects reachable from here, each once (linear in the shared DAG)."""
        seen: dict[int, PolicyTree] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) not in seen:
                seen[id(node)] = node
                stack.extend(c for _, c in node._items)
        return list(seen.values())

    def size(self) -> int:
        return 1 + sum(c.size() for _, c in self._items)

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, PolicyTree):
            return NotImplemented
        return self._hash == other._hash and self._key == other._key

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        if not self._items:
            return f"PolicyTree({self.option!r})"
        inner = ", ".join(f"{s!r}: {c!r}" for s, c in self._items)
        return f"PolicyTree({self.option!r}, {{{inner}}})"

    def to_json(self) -> dict:
        return {"option": self.option, "children": {s: c.to_json() for s, c in self._items}}

    @classmethod
    def from_json(cls, data: Mapping) -> "PolicyTree":
        return cls(data["option"], {s: cls.from_json(c) for s, c in data.get("children", {}).items()})


@dataclass(frozen=True)
class JointPolicy:
    trees: tuple[PolicyTree, ...]

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))

    def __len__(self) -> int:
        return len(self.trees)

    def __getitem__(self, i: int) -> PolicyTree:
        return self.trees[i]

    def to_json(self) -> dict:
        return {"agents": [t.to_json() for t in self.trees]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "JointPolicy":
        return cls(tuple(PolicyTree.from_json(t) for t in data["agents"]))

    @classmethod
    def loads(cls, text: str) -> "JointPolicy":
        return cls.from_json(json.loads(text))


# ---------------------------------------------------------------------------
# construction


def make_leaf(options: OptionSet, agent: int, option: str) -> PolicyTree:
    options.get(agent, option)
    return PolicyTree(option)


def attach(options: OptionSet, agent: int, root: str, children: Mapping[str, PolicyTree]) -> PolicyTree:
    """Tree rooted at ``root`` with the given signal-labelled children.

    Raises PolicyError if a signal is foreign to the root option or a child
    root is not applicable after ``(root, signal)``.
    """
    spec = options.get(agent, root)
    alphabet = options.signals(agent, root)
    for sig, child in children.items():
        if sig not in alphabet:
            raise PolicyError(f"signal {sig!r} is not a terminal signal of option {root!r} (has {alphabet})")
        if not options.applicable(agent, child.option, (spec.name, sig)):
            raise PolicyError(f"initiation violation: option {child.option!r} is not applicable "
                              f"after ({root!r}, {sig!r})")
    return PolicyTree(root, children)


def check_tree(options: OptionSet, agent: int, tree: PolicyTree, top_level: bool = True) -> list[str]:
    """Initiation and alphabet violations of ``tree`` for ``agent``."""
    out = []
    try:
        root = options.get(agent, tree.option)
    except OptionError as exc:
        return [str(exc)]
    if top_level and not root.root:
        out.append(f"root option {tree.option!r} is not root-applicable")
    stack = [tree]
    while stack:
        node = stack.pop()
        try:
            alphabet = options.signals(agent, node.option)
        except OptionError as exc:
            out.append(str(exc))
            continue
        for sig, child in node.items():
            if sig not in alphabet:
                out.append(f"signal {sig!r} is not a terminal signal of {node.option!r}")
            try:
                ok = options.applicable(agent, child.option, (node.option, sig))
            except OptionError as exc:
                out.append(str(exc))
                continue
            if not ok:
                out.append(f"initiation violation: ({node.option!r}, {sig!r}) -> {child.option!r}")
            stack.append(child)
    return out


def check_joint(options: OptionSet, jp: JointPolicy) -> list[str]:
    if len(jp) != len(options):
        return [f"policy has {len(jp)} trees for {len(options)} agents"]
    out = []
    for i, tree in enumerate(jp.trees):
        out.extend(f"agent {i}: {v}" for v in check_tree(options, i, tree))
    return out


def guaranteed_steps(options: OptionSet, agent: int, tree: PolicyTree) -> int:
    """Minimum over root-to-leaf paths of summed min_duration bounds.

    A node missing a child for one of its signals ends a path there.
    """
    memo: dict[int, int] = {}

    def go(node: PolicyTree) -> int:
        got = memo.get(id(node))
        if got is not None:
            return got
        own = options.get(agent, node.option).min_duration
        alphabet = options.signals(agent, node.option)
        if not alphabet or any(node.child(s) is None for s in alphabet):
            rest = 0
        else:
            rest = min(go(node.child(s)) for s in alphabet)
        memo[id(node)] = own + rest
        return own + rest

    return go(tree)


# ---------------------------------------------------------------------------
# per-agent local dynamics (shared by all evaluators)


class LocalDynamics:
    """Caches per-agent action rows and post-observation outcomes.

    An agent's local state is ``(node, pending symbol, lock)`` where ``lock``
    counts upcoming steps whose end may not terminate the current option.
    """

    def __init__(self, options: OptionSet):
        self.options = options
        self._acts: dict = {}
        self._outs: dict = {}
        self._lock0: dict = {}

    def entry_lock(self, agent: int, option: str) -> int:
        key = (agent, option)
        v = self._lock0.get(key)
        if v is None:
            v = self._lock0[key] = self.options.get(agent, option).min_duration - 1
        return v

    def start(self, agent: int, tree: PolicyTree) -> tuple:
        return (tree, START, self.entry_lock(agent, tree.option))

    def actions(self, agent: int, node: PolicyTree, pending: int):
        key = (agent, node.option, pending)
        row = self._acts.get(key)
        if row is None:
            row = self._acts[key] = self.options.get(agent, node.option).action_dist(pending)
        return row

    def outcomes(self, agent: int, node: PolicyTree, lock: int, obs: int):
        """List of ``(prob, (node', obs, lock'), fell)`` after observing ``obs``."""
        key = (agent, id(node), lock, obs)
        out = self._outs.get(key)
        if out is not None:
            return out
        spec = self.options.get(agent, node.option)
        beta = spec.beta(obs) if lock == 0 else 0.0
        out = []
        if beta < 1.0:
            out.append((1.0 - beta, (node, obs, max(lock - 1, 0)), False))
        if beta > 0.0:
            child = node.child(spec.signal(obs))
            if child is None:
                out.append((beta, (node, obs, spec.min_duration - 1), True))
            else:
                out.append((beta, (child, obs, self.entry_lock(agent, child.option)), False))
        self._outs[key] = out
        return out


def _joint_action_dist(model: ModelSpec, dyn: LocalDynamics, locs) -> list[tuple[int, float]]:
    rows = [dyn.actions(i, node, pend) for i, (node, pend, _) in enumerate(locs)]
    radices = [len(a) for a in model.actions]
    out = []
    for combo in product(*rows):
        a = 0
        p = 1.0
        for (ai, pi), r in zip(combo, radices):
            a = a * r + ai
            p *= pi
        if p > 0.0:
            out.append((a, p))
    return out


# ---------------------------------------------------------------------------
# exact evaluation


@dataclass
class ValueReport:
    value: float
    per_state: dict[str, float]
    fall_off: float = 0.0
    horizon: int = 0
    mass_by_depth: list[float] = field(default_factory=list)
    unreached_nodes: list[int] = field(default_factory=list)
    truncation_error: float | None = None

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "per_state": self.per_state,
            "fall_off": self.fall_off,
            "horizon": self.horizon,
            "max_mass_residual": max((abs(m - 1.0) for m in self.mass_by_depth), default=0.0),
            "unreached_nodes": self.unreached_nodes,
            "truncation_error": self.truncation_error,
        }


def _resolve_horizon(model: ModelSpec, h: int | None) -> tuple[int, float | None]:
    if h is None:
        if model.horizon is None:
            raise PolicyError("infinite-horizon model: pass an explicit step bound")
        h = model.horizon
    if h <= 0:
        raise PolicyError(f"horizon must be positive, got {h}")
    trunc = None
    if model.horizon is None or h < model.horizon:
        if model.discount < 1.0:
            rmax = float(np.abs(model.R).max()) if model.R.size else 0.0
            trunc = model.discount ** h * rmax / (1.0 - model.discount)
    return h, trunc


def _check_inputs(model: ModelSpec, options: OptionSet, jp: JointPolicy) -> None:
    if len(jp) != model.n_agents or len(options) != model.n_agents:
        raise PolicyError(f"agent count mismatch: model {model.n_agents}, options {len(options)}, policy {len(jp)}")


def evaluate_exact(
    model: ModelSpec,
    options: OptionSet,
    jp: JointPolicy,
    h: int | None = None,
    *,
    start_states: Sequence[int] | None = None,
) -> ValueReport:
    """Exact expected discounted return by forward expansion over extended states.

    Each start state in the support of b0 (or ``start_states``) is expanded
    separately; the b0 value is their b0-weighted sum.
    """
    _check_inputs(model, options, jp)
    h, trunc = _resolve_horizon(model, h)
    dyn = LocalDynamics(options)
    if start_states is None:
        start_states = [int(s) for s in np.flatnonzero(model.b0)]
    per_state: dict[str, float] = {}
    masses = [0.0] * h
    fall = 0.0
    reached: list[set[int]] = [set() for _ in range(model.n_agents)]
    value = 0.0
    for s0 in start_states:
        v, m, f = _forward(model, dyn, jp, s0, h, reached)
        per_state[model.states[s0]] = v
        w = float(model.b0[s0])
        value += w * v
        fall += w * f
        for t, x in enumerate(m):
            masses[t] += w * x
    total_w = float(sum(model.b0[s] for s in start_states))
    if start_states and total_w > 0 and abs(total_w - 1.0) > TOL:
        masses = [x / total_w for x in masses]
    unreached = []
    for i, tree in enumerate(jp.trees):
        ids = {id(n) for n in tree.distinct_nodes()}
        unreached.append(len(ids - reached[i]))
    return ValueReport(value=value, per_state=per_state, fall_off=fall, horizon=h,
                       mass_by_depth=masses, unreached_nodes=unreached, truncation_error=trunc)


def _forward(model, dyn, jp, s0, h, reached):
    n = model.n_agents
    gamma = model.discount
    R = model.R
    start = tuple(dyn.start(i, jp.trees[i]) for i in range(n))
    dist: dict = {(s0, start, False): 1.0}
    masses = []
    value = 0.0
    fall = 0.0
    disc = 1.0
    for t in range(h):
        masses.append(math.fsum(dist.values()))
        last = t == h - 1
        nxt: dict = defaultdict(float)
        for (s, locs, fell), p in dist.items():
            for i, loc in enumerate(locs):
                reached[i].add(id(loc[0]))
            for a, pa in _joint_action_dist(model, dyn, locs):
                w = p * pa
                value += disc * w * R[s, a]
                if last:
                    continue
                for s2, pt in model.t_row(s, a):
                    for o, po in model.o_row(a, s2):
                        obs = model.joint_observation(o)
                        per_agent = [dyn.outcomes(i, locs[i][0], locs[i][2], obs[i]) for i in range(n)]
                        base = w * pt * po
                        for combo in product(*per_agent):
                            q = base
                            any_fell = False
                            for c in combo:
                                q *= c[0]
                                any_fell = any_fell or c[2]
                            if q == 0.0:
                                continue
                            if any_fell and not fell:
                                fall += q
                            nxt[(s2, tuple(c[1] for c in combo), fell or any_fell)] += q
        dist = nxt
        disc *= gamma
    return value, masses, fall


class JointEvaluator:
    """Backward memoized evaluator for many joint policies sharing subtrees.

    ``value(trees, s, k)`` is the expected discounted return of running
    ``trees`` for ``k`` steps from state ``s``.  Results are cached on node
    identity, so callers must keep evaluated trees alive (the evaluator pins
    them) and should create a fresh evaluator per solver phase.
    """

    def __init__(self, model: ModelSpec, options: OptionSet):
        self.model = model
        self.options = options
        self.dyn = LocalDynamics(options)
        self._memo: dict = {}
        self._pinned: list = []
        self.calls = 0

    def value(self, trees: Sequence[PolicyTree], s: int, k: int, pending: Sequence[int] | None = None) -> float:
        self._pinned.append(tuple(trees))
        locs = tuple(
            (t, START if pending is None else pending[i], self.dyn.entry_lock(i, t.option))
            for i, t in enumerate(trees)
        )
        return self._v(k, s, locs)

    def value_b0(self, trees: Sequence[PolicyTree], k: int) -> float:
        return sum(float(self.model.b0[s]) * self.value(trees, int(s), k) for s in np.flatnonzero(self.model.b0))

    def _v(self, k: int, s: int, locs) -> float:
        if k <= 0:
            return 0.0
        key = (k, s, tuple((id(n), pend, lk) for n, pend, lk in locs))
        got = self._memo.get(key)
        if got is not None:
            return got
        self.calls += 1
        model = self.model
        dyn = self.dyn
        n = len(locs)
        total = 0.0
        for a, pa in _joint_action_dist(model, dyn, locs):
            r = model.R[s, a]
            if k == 1:
                total += pa * r
                continue
            cont = 0.0
            for s2, pt in model.t_row(s, a):
                for o, po in model.o_row(a, s2):
                    obs = model.joint_observation(o)
                    per_agent = [dyn.outcomes(i, locs[i][0], locs[i][2], obs[i]) for i in range(n)]
                    base = pt * po
                    if n == 2:
                        for q0, l0, _ in per_agent[0]:
                            for q1, l1, _ in per_agent[1]:
                                cont += base * q0 * q1 * self._v(k - 1, s2, (l0, l1))
                    else:
                        for combo in product(*per_agent):
                            q = base
                            for c in combo:
                                q *= c[0]
                            cont += q * self._v(k - 1, s2, tuple(c[1] for c in combo))
            total += pa * (r + model.discount * cont)
        self._memo[key] = total
        return total


def evaluate_mc(
    model: ModelSpec,
    options: OptionSet,
    jp: JointPolicy,
    h: int | None = None,
    n_samples: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Sample mean and standard error of the discounted return from b0.

    Episode ``i`` uses the same random streams as ``executor.run_episode(..., seed, index=i)``.
    """
    from .sim import simulate_returns

    _check_inputs(model, options, jp)
    if n_samples < 1:
        raise PolicyError("n_samples must be >= 1")
    h, _ = _resolve_horizon(model, h)
    returns = simulate_returns(model, options, jp, h, n_samples, seed)
    if np.all(returns == returns[0]):
        return float(returns[0]), 0.0
    mean = float(np.mean(returns))
    return mean, float(np.std(returns, ddof=1) / math.sqrt(n_samples))


def root_applicable(options: OptionSet, agent: int, tree: PolicyTree) -> bool:
    return options.applicable(agent, tree.option, ROOT)
