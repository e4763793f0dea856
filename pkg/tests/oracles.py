"""Independent brute-force oracles.

Nothing here calls the library's backup, evaluator or simulator; it reads
only the raw tables of a ModelSpec and the raw fields of each OptionSpec.
Trees are plain nested tuples ``(option, ((signal, child), ...))``.
"""

from __future__ import annotations

import itertools

import numpy as np

from macdec.policy import PolicyTree


class FallOff(AssertionError):
    pass


def _decode(index: int, radices):
    out = []
    for r in reversed(radices):
        index, d = divmod(index, r)
        out.append(d)
    return tuple(reversed(out))


def _encode(digits, radices) -> int:
    x = 0
    for d, r in zip(digits, radices):
        x = x * r + d
    return x


def _spec(options, agent, name):
    for o in options.agents[agent]:
        if o.name == name:
            return o
    raise KeyError(name)


def _beta(spec, obs):
    return spec.termination.get(obs, spec.default_termination)


def _signal(spec, obs):
    sig = spec.signals.get(obs)
    return spec.default_signal if sig is None else sig


def _alphabet(spec, n_obs):
    return sorted({_signal(spec, o) for o in range(n_obs) if _beta(spec, o) > 0})


def _allowed(spec, context):
    if context is None:
        return spec.root
    return context in spec.initiation


def enumerate_trees(options, agent: int, depth: int, context=None) -> list:
    """Every complete tree with exactly ``depth`` levels whose root may start in ``context``."""
    n_obs = len(options.model.observations[agent])
    out = []
    for spec in options.agents[agent]:
        if not _allowed(spec, context):
            continue
        if depth == 1:
            out.append((spec.name, ()))
            continue
        sigs = _alphabet(spec, n_obs)
        choices = [enumerate_trees(options, agent, depth - 1, (spec.name, s)) for s in sigs]
        if any(not c for c in choices):
            continue
        for combo in itertools.product(*choices):
            out.append((spec.name, tuple(zip(sigs, combo))))
    return out


def to_policy_tree(t) -> PolicyTree:
    return PolicyTree(t[0], {s: to_policy_tree(c) for s, c in t[1]})


def from_policy_tree(tree: PolicyTree):
    return (tree.option, tuple((s, from_policy_tree(c)) for s, c in sorted(tree.children.items())))


class TrajectoryOracle:
    """Expected return by summing over every length-h trajectory, no memoization."""

    def __init__(self, model, options):
        self.model = model
        self.options = options
        n_s = len(model.states)
        self.a_rad = [len(a) for a in model.actions]
        self.o_rad = [len(o) for o in model.observations]
        n_a = int(np.prod(self.a_rad))
        self.T = model.T.toarray().reshape(n_s, n_a, n_s)
        self.O = model.O.toarray().reshape(n_a, n_s, -1)
        self.R = np.asarray(model.R)
        self.gamma = model.discount
        self.fall_mass = 0.0

    def value(self, trees, h: int, raise_on_fall: bool = True) -> float:
        self.raise_on_fall = raise_on_fall
        self.fall_mass = 0.0
        total = 0.0
        for s0, p in enumerate(self.model.b0):
            if p > 0:
                agents = tuple((t, -1, _spec(self.options, i, t[0]).min_duration - 1) for i, t in enumerate(trees))
                total += p * self._rec(0, h, s0, agents, p, False)
        return total

    def _rec(self, t, h, s, agents, mass, fell_before) -> float:
        n = len(agents)
        per_agent_actions = []
        for i, (node, pend, _) in enumerate(agents):
            spec = _spec(self.options, i, node[0])
            row = spec.policy.get(pend, spec.default_policy)
            per_agent_actions.append(row)
        v = 0.0
        for combo in itertools.product(*per_agent_actions):
            pa = 1.0
            for _, p in combo:
                pa *= p
            a = _encode([x for x, _ in combo], self.a_rad)
            v += pa * self.R[s, a]
            if t == h - 1:
                continue
            cont = 0.0
            for s2 in np.flatnonzero(self.T[s, a]):
                pt = self.T[s, a, s2]
                for o in np.flatnonzero(self.O[a, s2]):
                    po = self.O[a, s2, o]
                    obs = _decode(int(o), self.o_rad)
                    branches = [self._local(i, agents[i], obs[i]) for i in range(n)]
                    for outcome in itertools.product(*branches):
                        q = 1.0
                        nxt = []
                        fell_now = False
                        for prob, state, fell in outcome:
                            q *= prob
                            fell_now = fell_now or fell
                            nxt.append(state)
                        if q == 0.0:
                            continue
                        w = mass * pa * pt * po * q
                        if fell_now:
                            if self.raise_on_fall:
                                raise FallOff(f"tree exhausted at step {t}")
                            if not fell_before:
                                self.fall_mass += w
                        cont += pt * po * q * self._rec(t + 1, h, int(s2), tuple(nxt), w, fell_before or fell_now)
            v += pa * self.gamma * cont
        return v

    def _local(self, i, agent, obs):
        node, _, lock = agent
        spec = _spec(self.options, i, node[0])
        beta = _beta(spec, obs) if lock == 0 else 0.0
        lock = max(lock - 1, 0)
        out = []
        if beta < 1.0:
            out.append((1.0 - beta, (node, obs, lock), False))
        if beta > 0.0:
            sig = _signal(spec, obs)
            child = dict(node[1]).get(sig)
            if child is None:
                # restart the same option
                out.append((beta, (node, obs, spec.min_duration - 1), True))
            else:
                out.append((beta, (child, obs, _spec(self.options, i, child[0]).min_duration - 1), False))
        return out


def brute_force_optimum(model, options, h: int):
    """Best joint tree (as nested tuples) over all complete legal depth-h trees, and its value."""
    per_agent = [enumerate_trees(options, i, h) for i in range(len(model.actions))]
    oracle = TrajectoryOracle(model, options)
    best, best_v = None, -np.inf
    for combo in itertools.product(*per_agent):
        v = oracle.value(combo, h)
        if v > best_v + 1e-12:
            best, best_v = combo, v
    return best, best_v, [len(p) for p in per_agent]


def pushforward(model, joint_action_dist, depth: int) -> np.ndarray:
    """State distribution after ``depth`` steps of an open-loop i.i.d. joint-action rule."""
    n_s = len(model.states)
    n_a = int(np.prod([len(a) for a in model.actions]))
    T = model.T.toarray().reshape(n_s, n_a, n_s)
    d = np.asarray(model.b0, dtype=float)
    P = np.einsum("a,sab->sb", joint_action_dist, T)
    for _ in range(depth):
        d = d @ P
    return d
