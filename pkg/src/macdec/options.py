"""Local options (macro-actions) with reactive policies, termination and signals.

Observation symbols are per-agent observation indices; ``START`` (-1) is the
symbol an option sees before the first observation of an episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .model import TOL, ModelSpec

START = -1
ROOT = None  # initiation context at the beginning of an episode


class OptionError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class OptionSpec:
    """One agent's macro-action.

    ``policy`` maps a symbol (observation index or START) to ``(action, prob)``
    pairs; symbols absent from the mapping use ``default_policy``.  Likewise
    ``termination``/``default_termination`` and ``signals``/``default_signal``.
    """

    name: str
    agent: int
    policy: Mapping[int, tuple[tuple[int, float], ...]]
    termination: Mapping[int, float]
    signals: Mapping[int, str]
    root: bool = False
    initiation: frozenset = frozenset()  # {(predecessor name, signal label)}
    min_duration: int = 1
    default_policy: tuple[tuple[int, float], ...] | None = None
    default_termination: float = 0.0
    default_signal: str | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def action_dist(self, symbol: int) -> tuple[tuple[int, float], ...]:
        row = self.policy.get(symbol, self.default_policy)
        if row is None:
            raise OptionError(f"option {self.name!r} has no policy row for symbol {symbol}")
        return row

    def beta(self, obs: int) -> float:
        return self.termination.get(obs, self.default_termination)

    def signal(self, obs: int) -> str:
        sig = self.signals.get(obs, self.default_signal)
        if sig is None:
            raise OptionError(f"option {self.name!r} has no signal for observation {obs}")
        return sig

    def signal_alphabet(self, n_obs: int) -> tuple[str, ...]:
        """Signals reachable through observations with positive termination probability."""
        key = ("alphabet", n_obs)
        out = self._cache.get(key)
        if out is None:
            labels = {self.signal(o) for o in range(n_obs) if self.beta(o) > 0}
            out = self._cache[key] = tuple(sorted(labels))
        return out


def applicable(option: OptionSpec, context) -> bool:
    """Initiation test: ``context`` is ROOT or a ``(predecessor, signal)`` pair."""
    if context is ROOT:
        return option.root
    return tuple(context) in option.initiation


def min_duration_bound(option: OptionSpec) -> int:
    return option.min_duration


class OptionSet:
    """Per-agent option collections bound to a model."""

    def __init__(self, model: ModelSpec, per_agent: Sequence[Sequence[OptionSpec]]):
        if len(per_agent) != model.n_agents:
            raise OptionError(f"model has {model.n_agents} agents but {len(per_agent)} option lists given")
        self.model = model
        self.agents: tuple[tuple[OptionSpec, ...], ...] = tuple(tuple(opts) for opts in per_agent)
        self._by_name = []
        for i, opts in enumerate(self.agents):
            table = {}
            for opt in opts:
                if opt.agent != i:
                    raise OptionError(f"option {opt.name!r} declares agent {opt.agent} but is listed for agent {i}")
                if opt.name in table:
                    raise OptionError(f"duplicate option name {opt.name!r} for agent {i}")
                table[opt.name] = opt
            self._by_name.append(table)
        self._successors: dict = {}

    def __len__(self) -> int:
        return len(self.agents)

    def get(self, agent: int, name: str) -> OptionSpec:
        try:
            return self._by_name[agent][name]
        except KeyError:
            raise OptionError(f"unknown option {name!r} for agent {agent}") from None

    def names(self, agent: int) -> list[str]:
        return [o.name for o in self.agents[agent]]

    def signals(self, agent: int, name: str) -> tuple[str, ...]:
        return self.get(agent, name).signal_alphabet(len(self.model.observations[agent]))

    def applicable(self, agent: int, name: str, context) -> bool:
        return applicable(self.get(agent, name), context)

    def successors(self, agent: int, context) -> tuple[str, ...]:
        """Names of options applicable in ``context``, in declaration order."""
        key = (agent, context)
        out = self._successors.get(key)
        if out is None:
            out = self._successors[key] = tuple(o.name for o in self.agents[agent] if applicable(o, context))
        return out

    def max_fanout(self, agent: int) -> int:
        return max((len(self.signals(agent, o.name)) for o in self.agents[agent]), default=0)


def validate_options(model: ModelSpec, options: OptionSet | Sequence[Sequence[OptionSpec]]) -> list[str]:
    """Return violations of the option invariants; empty means the set is usable by the solvers."""
    per_agent = options.agents if isinstance(options, OptionSet) else options
    out: list[str] = []
    if len(per_agent) != model.n_agents:
        return [f"model has {model.n_agents} agents but {len(per_agent)} option lists given"]
    for i, opts in enumerate(per_agent):
        n_act = len(model.actions[i])
        n_obs = len(model.observations[i])
        names = [o.name for o in opts]
        if not opts:
            out.append(f"agent {i} has no options")
            continue
        if len(set(names)) != len(names):
            out.append(f"agent {i} has duplicate option names")
        if not any(o.root for o in opts):
            out.append(f"agent {i} has no root-applicable option")
        for opt in opts:
            tag = f"option {opt.name!r} (agent {i})"
            if opt.agent != i:
                out.append(f"{tag} declares agent {opt.agent}")
            if opt.min_duration < 1:
                out.append(f"{tag} min_duration {opt.min_duration} < 1")
            rows = dict(opt.policy)
            for sym in [START, *range(n_obs)]:
                if sym not in rows:
                    if opt.default_policy is None:
                        out.append(f"{tag} has no policy row for {'START' if sym == START else model.observations[i][sym]}")
                        break
            if opt.default_policy is not None:
                rows["*"] = opt.default_policy
            for sym, row in rows.items():
                total = sum(p for _, p in row)
                if abs(total - 1.0) > TOL:
                    out.append(f"{tag} policy row {sym} sums to {total:.12g}")
                for a, p in row:
                    if not 0 <= a < n_act:
                        out.append(f"{tag} policy row {sym} uses unknown action {a}")
                    if p < 0:
                        out.append(f"{tag} policy row {sym} has negative probability {p}")
            betas = [opt.beta(o) for o in range(n_obs)]
            for o, b in enumerate(betas):
                if not 0.0 <= b <= 1.0:
                    out.append(f"{tag} termination for {model.observations[i][o]} = {b} outside [0, 1]")
            if not any(b > 0 for b in betas):
                out.append(f"{tag} never terminates (termination identically 0)")
            for o, b in enumerate(betas):
                if b > 0 and opt.signals.get(o, opt.default_signal) is None:
                    out.append(f"{tag} has no signal for terminating observation {model.observations[i][o]}")
            for pred, _label in opt.initiation:
                if pred not in names:
                    out.append(f"{tag} initiation names unknown predecessor {pred!r}")
        # every terminal signal must have an applicable successor so trees extend
        for opt in opts:
            if not any(b > 0 for b in (opt.beta(o) for o in range(n_obs))):
                continue
            try:
                alphabet = opt.signal_alphabet(n_obs)
            except OptionError:
                continue
            for sig in alphabet:
                if not any(applicable(nxt, (opt.name, sig)) for nxt in opts):
                    out.append(f"option {opt.name!r} (agent {i}) signal {sig!r} has no applicable successor")
    return out


# ---------------------------------------------------------------------------
# text format


def parse_options(text: str, model: ModelSpec) -> OptionSet:
    """Parse option blocks against ``model``'s action/observation names."""
    blocks: list[dict] = []
    cur: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("option "):
            toks = line.split()
            if len(toks) < 2:
                raise OptionError("option block needs a name", lineno)
            cur = {"name": toks[1], "line": lineno, "agent": None, "root": False, "min_dur": 1,
                   "pi": {}, "beta": {}, "signal": {}, "init": set()}
            for tok in toks[2:]:
                k, eq, v = tok.partition("=")
                if not eq or k not in ("agent", "root", "min_dur"):
                    raise OptionError(f"bad option attribute {tok!r}", lineno)
                try:
                    iv = int(v)
                except ValueError:
                    raise OptionError(f"attribute {k} must be an integer, got {v!r}", lineno) from None
                if k == "agent":
                    cur["agent"] = iv
                elif k == "root":
                    if iv not in (0, 1):
                        raise OptionError("root must be 0 or 1", lineno)
                    cur["root"] = bool(iv)
                else:
                    cur["min_dur"] = iv
            if cur["agent"] is None:
                raise OptionError("option block needs agent=<i>", lineno)
            if not 0 <= cur["agent"] < model.n_agents:
                raise OptionError(f"agent {cur['agent']} out of range", lineno)
            blocks.append(cur)
            continue
        if cur is None:
            raise OptionError("directive outside an option block", lineno)
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep:
            raise OptionError(f"expected 'key: value', got {line!r}", lineno)
        agent = cur["agent"]
        obs_index = {o: j for j, o in enumerate(model.observations[agent])}
        act_index = {a: j for j, a in enumerate(model.actions[agent])}

        def sym_of(tok: str):
            if tok == "*":
                return "*"
            if tok == "START":
                return START
            try:
                return obs_index[tok]
            except KeyError:
                raise OptionError(f"unknown observation {tok!r} for agent {agent}", lineno) from None

        def prob(tok: str) -> float:
            try:
                return float(tok)
            except ValueError:
                raise OptionError(f"expected a number, got {tok!r}", lineno) from None

        if key == "pi":
            sym_txt, sep2, tail = rest.partition(":")
            toks = tail.split()
            if not sep2 or len(toks) != 2:
                raise OptionError("pi needs 'pi: <obs|START|*> : <action> <prob>'", lineno)
            sym = sym_of(sym_txt.strip())
            if toks[0] not in act_index:
                raise OptionError(f"unknown action {toks[0]!r} for agent {agent}", lineno)
            row = cur["pi"].setdefault(sym, {})
            a = act_index[toks[0]]
            if a in row:
                raise OptionError("duplicate pi entry", lineno)
            row[a] = prob(toks[1])
        elif key in ("beta", "signal", "init"):
            toks = rest.split()
            if len(toks) != 2:
                raise OptionError(f"{key} needs two fields", lineno)
            if key == "init":
                cur["init"].add((toks[0], toks[1]))
                continue
            sym = sym_of(toks[0])
            if sym == START:
                raise OptionError(f"{key} is defined on observations, not START", lineno)
            table = cur[key]
            if sym in table:
                raise OptionError(f"duplicate {key} entry", lineno)
            table[sym] = prob(toks[1]) if key == "beta" else toks[1]
        else:
            raise OptionError(f"unknown option directive {key!r}", lineno)

    per_agent: list[list[OptionSpec]] = [[] for _ in range(model.n_agents)]
    for b in blocks:
        pi = {s: tuple(sorted(r.items())) for s, r in b["pi"].items() if s != "*"}
        default_pi = tuple(sorted(b["pi"]["*"].items())) if "*" in b["pi"] else None
        beta = {s: v for s, v in b["beta"].items() if s != "*"}
        sig = {s: v for s, v in b["signal"].items() if s != "*"}
        per_agent[b["agent"]].append(OptionSpec(
            name=b["name"], agent=b["agent"], policy=pi, termination=beta, signals=sig,
            root=b["root"], initiation=frozenset(b["init"]), min_duration=b["min_dur"],
            default_policy=default_pi, default_termination=b["beta"].get("*", 0.0),
            default_signal=b["signal"].get("*"),
        ))
    try:
        return OptionSet(model, per_agent)
    except OptionError as exc:
        raise OptionError(str(exc)) from None


def emit_options(options: OptionSet) -> str:
    model = options.model
    lines = ["# local options"]
    for i, opts in enumerate(options.agents):
        onames = model.observations[i]
        anames = model.actions[i]

        def sym(s):
            return "START" if s == START else onames[s]

        for opt in opts:
            lines.append(f"option {opt.name} agent={i} root={int(opt.root)} min_dur={opt.min_duration}")
            if opt.default_policy is not None:
                for a, p in opt.default_policy:
                    lines.append(f"pi: * : {anames[a]} {p!r}")
            for s in sorted(opt.policy):
                for a, p in opt.policy[s]:
                    lines.append(f"pi: {sym(s)} : {anames[a]} {p!r}")
            if opt.default_termination:
                lines.append(f"beta: * {opt.default_termination!r}")
            for o in sorted(opt.termination):
                lines.append(f"beta: {onames[o]} {opt.termination[o]!r}")
            if opt.default_signal is not None:
                lines.append(f"signal: * {opt.default_signal}")
            for o in sorted(opt.signals):
                lines.append(f"signal: {onames[o]} {opt.signals[o]}")
            for pred, label in sorted(opt.initiation):
                lines.append(f"init: {pred} {label}")
            lines.append("")
    return "\n".join(lines)


def options_equal(a: OptionSet, b: OptionSet) -> bool:
    if len(a.agents) != len(b.agents):
        return False
    for xs, ys in zip(a.agents, b.agents):
        if len(xs) != len(ys):
            return False
        for x, y in zip(xs, ys):
            if (x.name, x.agent, x.root, x.initiation, x.min_duration, x.default_policy,
                x.default_termination, x.default_signal) != (
                y.name, y.agent, y.root, y.initiation, y.min_duration, y.default_policy,
                y.default_termination, y.default_signal):
                return False
            if dict(x.policy) != dict(y.policy) or dict(x.termination) != dict(y.termination):
                return False
            if dict(x.signals) != dict(y.signals):
                return False
    return True


def make_option(
    model: ModelSpec,
    agent: int,
    name: str,
    *,
    policy: Mapping[str, Mapping[str, float]] | None = None,
    default_action: str | Mapping[str, float] | None = None,
    termination: Mapping[str, float] | None = None,
    default_termination: float = 0.0,
    signals: Mapping[str, str] | None = None,
    default_signal: str | None = None,
    root: bool = False,
    initiation: Iterable[tuple[str, str]] = (),
    min_duration: int = 1,
) -> OptionSpec:
    """Build an OptionSpec from names rather than indices."""
    obs = {o: j for j, o in enumerate(model.observations[agent])}
    acts = {a: j for j, a in enumerate(model.actions[agent])}

    def row(spec) -> tuple[tuple[int, float], ...]:
        if isinstance(spec, str):
            spec = {spec: 1.0}
        return tuple(sorted((acts[a], float(p)) for a, p in spec.items()))

    def sym(name: str) -> int:
        return START if name == "START" else obs[name]

    return OptionSpec(
        name=name,
        agent=agent,
        policy={sym(k): row(v) for k, v in (policy or {}).items()},
        termination={obs[k]: float(v) for k, v in (termination or {}).items()},
        signals={obs[k]: v for k, v in (signals or {}).items()},
        root=root,
        initiation=frozenset(tuple(x) for x in initiation),
        min_duration=min_duration,
        default_policy=None if default_action is None else row(default_action),
        default_termination=float(default_termination),
        default_signal=default_signal,
    )
