"""Option-based memory-bounded DP: keep only trees that win at heuristic-sampled states."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dp import (
    DEFAULT_JOINT_CAP,
    CapExceeded,
    Caps,
    best_joint,
    exhaustive_backup,
    root_trees,
    test_policy_sets_length,
)
from .model import ModelSpec
from .options import ROOT, START, OptionSet
from .policy import JointEvaluator, JointPolicy, PolicyTree, ValueReport, evaluate_exact
from .sim import AgentController, _draw, _Env, _sample_b0, run

log = logging.getLogger(__name__)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


class HeuristicPolicy:
    """Something that can be run forward from b0 to produce a sample state."""

    name = "heuristic"
    mode = "blind"

    def filler(self, options: OptionSet, agent: int, context: tuple[str, str], depth: int) -> PolicyTree | None:
        """Depth-``depth`` subtree to use after ``context`` when no retained tree fits; None for the default."""
        return None

    def rollout(self, model: ModelSpec, depth: int, rng: np.random.Generator) -> int:
        raise NotImplementedError


class RuleHeuristic(HeuristicPolicy):
    """Primitive joint-action rule ``rule(t, s, rng) -> joint action index``.

    In blind mode the rule receives ``None`` instead of the state.
    """

    def __init__(self, rule: Callable[[int, int | None, np.random.Generator], int], mode: str = "blind",
                 name: str = "rule"):
        if mode not in ("blind", "state"):
            raise ValueError(f"mode must be 'blind' or 'state', got {mode!r}")
        self.rule = rule
        self.mode = mode
        self.name = name

    def rollout(self, model, depth, rng):
        env = _Env(model)
        s = _sample_b0(model, rng)
        for t in range(depth):
            a = int(self.rule(t, s if self.mode == "state" else None, rng))
            s = env.next_state(s, a, rng)
        return s


def uniform_actions(model: ModelSpec) -> RuleHeuristic:
    n = model.n_joint_actions
    return RuleHeuristic(lambda t, s, rng: int(rng.integers(n)), "blind", "random-actions")


class RandomOptionHeuristic(HeuristicPolicy):
    """Each agent runs options picked uniformly among those applicable, through their internal policies."""

    name = "random-options"

    def __init__(self, options: OptionSet):
        self.options = options

    def rollout(self, model, depth, rng):
        opts = self.options
        n = model.n_agents
        env = _Env(model)
        s = _sample_b0(model, rng)
        cur = []
        for i in range(n):
            roots = opts.successors(i, ROOT)
            cur.append(roots[int(rng.integers(len(roots)))])
        pending = [START] * n
        locks = [opts.get(i, m).min_duration - 1 for i, m in enumerate(cur)]
        for _ in range(depth):
            a = 0
            for i in range(n):
                ai = _draw(opts.get(i, cur[i]).action_dist(pending[i]), rng)
                a = a * len(model.actions[i]) + ai
            s = env.next_state(s, a, rng)
            obs = model.joint_observation(env.observation(a, s, rng))
            for i in range(n):
                spec = opts.get(i, cur[i])
                pending[i] = obs[i]
                beta = spec.beta(obs[i]) if locks[i] == 0 else 0.0
                locks[i] = max(locks[i] - 1, 0)
                if beta > 0.0 and (beta >= 1.0 or rng.random() < beta):
                    succ = opts.successors(i, (spec.name, spec.signal(obs[i])))
                    if succ:
                        cur[i] = succ[int(rng.integers(len(succ)))]
                    locks[i] = opts.get(i, cur[i]).min_duration - 1
        return s


class PolicyHeuristic(HeuristicPolicy):
    """Runs a fixed joint option policy (e.g. a hand-coded domain heuristic)."""

    def __init__(self, options: OptionSet, jp: JointPolicy, name: str = "policy", mode: str = "blind",
                 filler: Callable[[OptionSet, int, tuple[str, str], int], PolicyTree | None] | None = None):
        self.options = options
        self.jp = jp
        self.name = name
        self.mode = mode
        self._filler = filler

    def filler(self, options, agent, context, depth):
        return self._filler(options, agent, context, depth) if self._filler else None

    def rollout(self, model, depth, rng):
        if depth == 0:
            return _sample_b0(model, rng)
        # controller streams are drawn from the rollout generator so one seed fixes everything
        ctls = [AgentController.from_tree(self.options, i, t, np.random.Generator(np.random.PCG64(int(rng.integers(2**63)))))
                for i, t in enumerate(self.jp.trees)]
        return run(model, self.options, ctls, rng, depth)[2]


# domain code registers named heuristic factories here: name -> f(model, options) -> HeuristicPolicy
HEURISTICS: dict[str, Callable[[ModelSpec, OptionSet], HeuristicPolicy]] = {
    "random-options": lambda m, o: RandomOptionHeuristic(o),
    "random-actions": lambda m, o: uniform_actions(m),
}


def make_heuristic(name: str, model: ModelSpec, options: OptionSet) -> HeuristicPolicy:
    try:
        factory = HEURISTICS[name]
    except KeyError:
        raise ValueError(f"unknown heuristic {name!r}; known: {sorted(HEURISTICS)}") from None
    return factory(model, options)


def generate_state(model: ModelSpec, heuristic: HeuristicPolicy, depth: int, seed) -> int:
    """Sample the state reached after running ``heuristic`` from b0 for ``depth`` steps."""
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if model.horizon is not None and depth > model.horizon:
        raise ValueError(f"depth {depth} exceeds horizon {model.horizon}")
    rng = _rng(seed)
    if depth == 0:
        return _sample_b0(model, rng)
    return int(heuristic.rollout(model, depth, rng))


@dataclass
class RetentionConfig:
    max_trees: int | None = 3  # None disables retention entirely
    seed: int = 0
    heuristic: str | HeuristicPolicy = "random-options"

    def __post_init__(self):
        if self.max_trees is not None and self.max_trees < 1:
            raise ValueError(f"max_trees must be >= 1, got {self.max_trees}")


@dataclass
class MBDPStats:
    iterations: list[dict] = field(default_factory=list)
    joint_evaluations: int = 0

    def to_json(self) -> dict:
        return {"iterations": self.iterations, "joint_evaluations": self.joint_evaluations}

    def max_ratio(self) -> float:
        """Largest observed candidates / analytic-bound ratio over all iterations and agents."""
        r = 0.0
        for it in self.iterations:
            for c, b in zip(it["candidates"], it["bound"]):
                r = max(r, c / b)
        return r


def select_trees(
    candidates: Sequence[Sequence[PolicyTree]],
    model: ModelSpec,
    options: OptionSet,
    sampled_states: Sequence[int],
    max_trees: int,
    h_eval: int,
    *,
    cap: int = DEFAULT_JOINT_CAP,
    evaluator: JointEvaluator | None = None,
    records: list | None = None,
) -> list[list[PolicyTree]]:
    """Per sampled state keep the argmax joint tuple; union per agent, capped at ``max_trees``."""
    if any(len(c) == 0 for c in candidates):
        raise ValueError("every agent needs at least one candidate tree")
    ev = evaluator or JointEvaluator(model, options)
    kept: list[list[PolicyTree]] = [[] for _ in candidates]
    seen: list[set] = [set() for _ in candidates]
    for s in sampled_states:
        idx, val, _ = best_joint(model, options, candidates, h_eval, state=s, cap=cap, evaluator=ev)
        if records is not None:
            records.append({"state": model.states[s], "value": val, "tuple": list(idx)})
        for i, j in enumerate(idx):
            tree = candidates[i][j]
            if tree not in seen[i] and len(kept[i]) < max_trees:
                seen[i].add(tree)
                kept[i].append(tree)
    return kept


class _Fillers:
    """Deterministic chains used where no retained tree fits a signal.

    ``get(agent, option, d)`` is a depth-``d`` tree rooted at ``option`` whose
    every signal leads to the first applicable successor.  A heuristic may
    supply its own subtrees instead.
    """

    def __init__(self, options: OptionSet, heuristic: HeuristicPolicy | None = None):
        self.options = options
        self.heuristic = heuristic
        self._memo: dict = {}

    def get(self, agent: int, option: str, depth: int) -> PolicyTree:
        key = (agent, option, depth)
        got = self._memo.get(key)
        if got is None:
            children = {}
            if depth > 1:
                for sig in self.options.signals(agent, option):
                    succ = self.options.successors(agent, (option, sig))
                    children[sig] = self.get(agent, succ[0], depth - 1)
            got = self._memo[key] = PolicyTree(option, children)
        return got

    def fallback(self, depth: int):
        def fb(agent: int, option: str, sig: str) -> PolicyTree | None:
            key = (agent, option, sig, depth, "h")
            if key in self._memo:
                return self._memo[key]
            tree = None
            if self.heuristic is not None:
                tree = self.heuristic.filler(self.options, agent, (option, sig), depth)
            if tree is None:
                succ = self.options.successors(agent, (option, sig))
                tree = self.get(agent, succ[0], depth) if succ else None
            self._memo[key] = tree
            return tree

        return fb


def candidate_bound(options: OptionSet, agent: int, max_trees: int) -> int:
    return len(options.agents[agent]) * max_trees ** options.max_fanout(agent)


def solve_ombdp(
    model: ModelSpec,
    options: OptionSet,
    h: int | None = None,
    cfg: RetentionConfig | None = None,
    caps: Caps | None = None,
    progress: Callable[[dict], None] | None = None,
) -> tuple[JointPolicy, ValueReport, MBDPStats]:
    """Alternate exhaustive backups with heuristic-state selection until trees span ``h``."""
    cfg = cfg or RetentionConfig()
    caps = caps or Caps()
    h = model.horizon if h is None else h
    if h is None:
        raise ValueError("solve_ombdp needs a finite horizon")
    if h <= 0:
        raise ValueError(f"horizon must be positive, got {h}")
    heur = cfg.heuristic
    if isinstance(heur, str):
        heur = make_heuristic(heur, model, options)
    n = model.n_agents
    stats = MBDPStats()
    fillers = _Fillers(options, heur)
    sets: list[list[PolicyTree]] = [[] for _ in range(n)]
    t = 0
    while True:
        fb = fillers.fallback(t) if cfg.max_trees is not None and t > 0 else None
        cands = exhaustive_backup(options, sets, cap=caps.trees, fallback=fb)
        too_short = test_policy_sets_length(options, cands, h)
        info = {"iteration": t, "candidates": [len(c) for c in cands], "some_too_short": too_short}
        if cfg.max_trees is not None:
            info["bound"] = [candidate_bound(options, i, cfg.max_trees) for i in range(n)]
        if not too_short:
            stats.iterations.append(info)
            if progress:
                progress(info)
            break
        if cfg.max_trees is None or all(len(c) <= cfg.max_trees for c in cands):
            sets = cands
            info["sampled"] = []
        else:
            depth = max(h - t - 1, 0)
            it_ss = np.random.SeedSequence([int(cfg.seed), t])
            states = [generate_state(model, heur, depth, ss) for ss in it_ss.spawn(cfg.max_trees)]
            records: list = []
            ev = JointEvaluator(model, options)
            sets = select_trees(cands, model, options, states, cfg.max_trees, t + 1,
                                cap=caps.joint, evaluator=ev, records=records)
            stats.joint_evaluations += math.prod(len(c) for c in cands) * len(states)
            info["sampled"] = records
        info["retained"] = [len(s) for s in sets]
        stats.iterations.append(info)
        log.info("O-MBDP iteration %d: %s", t, {k: v for k, v in info.items() if k != "sampled"})
        if progress:
            progress(info)
        t += 1
    roots = root_trees(options, cands)
    idx, _, count = best_joint(model, options, roots, h, cap=caps.joint)
    stats.joint_evaluations += count
    jp = JointPolicy(tuple(roots[i][j] for i, j in enumerate(idx)))
    return jp, evaluate_exact(model, options, jp, h), stats


__all__ = [
    "CapExceeded",
    "HeuristicPolicy",
    "RuleHeuristic",
    "RandomOptionHeuristic",
    "PolicyHeuristic",
    "HEURISTICS",
    "RetentionConfig",
    "MBDPStats",
    "generate_state",
    "select_trees",
    "solve_ombdp",
    "candidate_bound",
    "make_heuristic",
    "uniform_actions",
]
