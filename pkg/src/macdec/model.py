"""Tabular Dec-POMDP models: storage, validation, text format and step queries.

Joint actions and joint observations are indexed in mixed radix with agent 0
as the most significant digit.  Transition and observation tables are kept as
CSR matrices (rows ``s * |A| + a`` and ``a * |S| + s'`` respectively) because
generated domains have a few nonzeros per row but joint observation spaces in
the thousands.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

TOL = 1e-9

_NAME_RE = re.compile(r"^[^\s:#=]+$")


class ModelError(ValueError):
    """Raised for malformed model text or an invalid model."""

    def __init__(self, message: str, line: int | None = None, violations: Sequence[str] = ()):
        self.line = line
        self.violations = list(violations)
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """The tuple <I, S, {A_i}, T, R, {Omega_i}, O, h> plus b0 and discount."""

    states: tuple[str, ...]
    actions: tuple[tuple[str, ...], ...]
    observations: tuple[tuple[str, ...], ...]
    b0: np.ndarray
    T: sp.csr_matrix
    O: sp.csr_matrix
    R: np.ndarray
    horizon: int | None = None
    discount: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- sizes -------------------------------------------------------------
    @property
    def n_agents(self) -> int:
        return len(self.actions)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_joint_actions(self) -> int:
        return math.prod(len(a) for a in self.actions)

    @property
    def n_joint_observations(self) -> int:
        return math.prod(len(o) for o in self.observations)

    # -- index helpers -----------------------------------------------------
    def joint_action_index(self, joint: Sequence[int]) -> int:
        return _encode(joint, [len(a) for a in self.actions])

    def joint_action(self, index: int) -> tuple[int, ...]:
        return _decode(index, [len(a) for a in self.actions])

    def joint_observation_index(self, joint: Sequence[int]) -> int:
        return _encode(joint, [len(o) for o in self.observations])

    def joint_observation(self, index: int) -> tuple[int, ...]:
        cache = self._cache.setdefault("jo", {})
        out = cache.get(index)
        if out is None:
            out = cache[index] = _decode(index, [len(o) for o in self.observations])
        return out

    def state_index(self, name: str) -> int:
        lookup = self._cache.get("state_index")
        if lookup is None:
            lookup = self._cache["state_index"] = {s: i for i, s in enumerate(self.states)}
        return lookup[name]

    # -- fast row access used by evaluators --------------------------------
    def t_row(self, s: int, a: int) -> tuple[tuple[int, float], ...]:
        """Nonzero successor entries of T(s, a, .) as ``(s', p)`` pairs."""
        rows = self._cache.setdefault("t_rows", {})
        key = s * self.n_joint_actions + a
        row = rows.get(key)
        if row is None:
            row = rows[key] = _csr_row(self.T, key)
        return row

    def o_row(self, a: int, s_next: int) -> tuple[tuple[int, float], ...]:
        """Nonzero entries of O(., a, s') as ``(joint obs index, p)`` pairs."""
        rows = self._cache.setdefault("o_rows", {})
        key = a * self.n_states + s_next
        row = rows.get(key)
        if row is None:
            row = rows[key] = _csr_row(self.O, key)
        return row

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            self.states == other.states
            and self.actions == other.actions
            and self.observations == other.observations
            and self.horizon == other.horizon
            and self.discount == other.discount
            and np.array_equal(self.b0, other.b0)
            and np.array_equal(self.R, other.R)
            and _csr_equal(self.T, other.T)
            and _csr_equal(self.O, other.O)
        )

    __hash__ = object.__hash__


def _encode(digits: Sequence[int], radices: Sequence[int]) -> int:
    if len(digits) != len(radices):
        raise IndexError(f"expected {len(radices)} components, got {len(digits)}")
    index = 0
    for d, r in zip(digits, radices):
        if not 0 <= d < r:
            raise IndexError(f"component {d} out of range [0, {r})")
        index = index * r + d
    return index


def _decode(index: int, radices: Sequence[int]) -> tuple[int, ...]:
    if not 0 <= index < math.prod(radices):
        raise IndexError(f"joint index {index} out of range")
    out = []
    for r in reversed(radices):
        index, d = divmod(index, r)
        out.append(d)
    return tuple(reversed(out))


def _csr_row(m: sp.csr_matrix, row: int) -> tuple[tuple[int, float], ...]:
    lo, hi = m.indptr[row], m.indptr[row + 1]
    return tuple(zip(m.indices[lo:hi].tolist(), m.data[lo:hi].tolist()))


def _csr_equal(a: sp.csr_matrix, b: sp.csr_matrix) -> bool:
    if a.shape != b.shape:
        return False
    a = a.copy()
    b = b.copy()
    for m in (a, b):
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
    return (
        np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )


def build_model(
    states: Sequence[str],
    actions: Sequence[Sequence[str]],
    observations: Sequence[Sequence[str]],
    b0,
    T,
    O,
    R,
    horizon: int | None = None,
    discount: float = 1.0,
) -> ModelSpec:
    """Assemble a ModelSpec from arrays; T/O may be dense or scipy sparse.

    Dense shapes: ``T[s, a, s']``, ``O[a, s', o]``, ``R[s, a]``.
    """
    n_s = len(states)
    n_a = math.prod(len(a) for a in actions)
    n_o = math.prod(len(o) for o in observations)
    T = _as_csr(T, (n_s * n_a, n_s))
    O = _as_csr(O, (n_a * n_s, n_o))
    return ModelSpec(
        states=tuple(states),
        actions=tuple(tuple(a) for a in actions),
        observations=tuple(tuple(o) for o in observations),
        b0=np.asarray(b0, dtype=float),
        T=T,
        O=O,
        R=np.asarray(R, dtype=float).reshape(n_s, n_a),
        horizon=horizon,
        discount=float(discount),
    )


def _as_csr(m, shape) -> sp.csr_matrix:
    if sp.issparse(m):
        out = sp.csr_matrix(m, dtype=float)
    else:
        out = sp.csr_matrix(np.asarray(m, dtype=float).reshape(shape))
    if out.shape != shape:
        raise ModelError(f"table shape {out.shape} does not match expected {shape}")
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


# ---------------------------------------------------------------------------
# queries


def _check_state(model: ModelSpec, s: int) -> None:
    if not 0 <= s < model.n_states:
        raise IndexError(f"state {s} out of range [0, {model.n_states})")


def _joint(model: ModelSpec, a, kind: str = "action") -> int:
    if isinstance(a, (int, np.integer)):
        limit = model.n_joint_actions if kind == "action" else model.n_joint_observations
        if not 0 <= a < limit:
            raise IndexError(f"joint {kind} {a} out of range")
        return int(a)
    if kind == "action":
        return model.joint_action_index(a)
    return model.joint_observation_index(a)


def transition(model: ModelSpec, s: int, a) -> dict[int, float]:
    """Pr(s' | s, a) as a dict over successor states with nonzero mass."""
    _check_state(model, s)
    return dict(model.t_row(s, _joint(model, a)))


def observe(model: ModelSpec, a, s_next: int) -> dict[tuple[int, ...], float]:
    """Pr(o | a, s') keyed by per-agent observation tuples."""
    _check_state(model, s_next)
    row = model.o_row(_joint(model, a), s_next)
    return {model.joint_observation(o): p for o, p in row}


def reward(model: ModelSpec, s: int, a) -> float:
    _check_state(model, s)
    return float(model.R[s, _joint(model, a)])


# ---------------------------------------------------------------------------
# validation


def validate(model: ModelSpec) -> list[str]:
    """Return every invariant violation; an empty list means the model is valid."""
    out: list[str] = []
    n_s, n_a = model.n_states, model.n_joint_actions
    if model.n_agents < 1:
        out.append("model needs at least one agent")
    if n_s < 1:
        out.append("model needs at least one state")
    for i, acts in enumerate(model.actions):
        if not acts:
            out.append(f"agent {i} has no actions")
    for i, obs in enumerate(model.observations):
        if not obs:
            out.append(f"agent {i} has no observations")
    if len(set(model.states)) != n_s:
        out.append("duplicate state names")
    if out:
        return out

    if model.b0.shape != (n_s,):
        out.append(f"b0 has shape {model.b0.shape}, expected ({n_s},)")
    else:
        if (model.b0 < 0).any():
            for s in np.flatnonzero(model.b0 < 0):
                out.append(f"b0[{model.states[s]}] = {model.b0[s]} is negative")
        resid = float(model.b0.sum()) - 1.0
        if abs(resid) > TOL:
            out.append(f"b0 sums to {model.b0.sum():.12g} (residual {resid:.3g})")

    if model.R.shape != (n_s, n_a):
        out.append(f"R has shape {model.R.shape}, expected ({n_s}, {n_a})")
    elif not np.isfinite(model.R).all():
        out.append("R contains non-finite entries")

    out.extend(_stochastic_rows(model.T, "T", lambda r: _t_label(model, r)))
    out.extend(_stochastic_rows(model.O, "O", lambda r: _o_label(model, r)))

    if model.horizon is not None and model.horizon < 1:
        out.append(f"horizon {model.horizon} must be positive")
    if not 0.0 < model.discount <= 1.0:
        out.append(f"discount {model.discount} outside (0, 1]")
    elif model.discount == 1.0 and model.horizon is None:
        out.append("discount 1 requires a finite horizon")
    return out


def _stochastic_rows(m: sp.csr_matrix, name: str, label) -> list[str]:
    out = []
    neg_rows = np.unique(np.searchsorted(m.indptr, np.flatnonzero(m.data < 0), side="right") - 1)
    for r in neg_rows:
        lo, hi = m.indptr[r], m.indptr[r + 1]
        for col, p in zip(m.indices[lo:hi], m.data[lo:hi]):
            if p < 0:
                out.append(f"{name}{label(r)} entry {col} = {p} is negative")
    sums = np.asarray(m.sum(axis=1)).ravel()
    for r in np.flatnonzero(np.abs(sums - 1.0) > TOL):
        out.append(f"{name}{label(r)} sums to {sums[r]:.12g} (residual {sums[r] - 1.0:.3g})")
    return out


def _t_label(model: ModelSpec, row: int) -> str:
    s, a = divmod(int(row), model.n_joint_actions)
    return f"(s={model.states[s]}, a={joint_action_name(model, a)})"


def _o_label(model: ModelSpec, row: int) -> str:
    a, s = divmod(int(row), model.n_states)
    return f"(a={joint_action_name(model, a)}, s'={model.states[s]})"


def joint_action_name(model: ModelSpec, a: int) -> str:
    return " ".join(model.actions[i][x] for i, x in enumerate(model.joint_action(a)))


def joint_observation_name(model: ModelSpec, o: int) -> str:
    return " ".join(model.observations[i][x] for i, x in enumerate(model.joint_observation(o)))


def check(model: ModelSpec) -> ModelSpec:
    """Raise ModelError listing violations, else return the model."""
    problems = validate(model)
    if problems:
        raise ModelError("invalid model: " + "; ".join(problems[:5]), violations=problems)
    return model


# ---------------------------------------------------------------------------
# text format


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_model(model: ModelSpec) -> str:
    """Serialize to the line-oriented model format; parse_model inverts it exactly."""
    lines = [
        "# tabular Dec-POMDP",
        f"agents: {model.n_agents}",
        "states: " + " ".join(model.states),
        f"horizon: {'infinite' if model.horizon is None else model.horizon}",
        f"discount: {_fmt(model.discount)}",
        "start: " + " ".join(f"{model.states[s]}={_fmt(model.b0[s])}" for s in np.flatnonzero(model.b0)),
    ]
    for i in range(model.n_agents):
        lines.append(f"actions[{i}]: " + " ".join(model.actions[i]))
    for i in range(model.n_agents):
        lines.append(f"observations[{i}]: " + " ".join(model.observations[i]))

    n_a, n_s = model.n_joint_actions, model.n_states
    anames = [joint_action_name(model, a) for a in range(n_a)]
    T, O = model.T, model.O
    for row in range(T.shape[0]):
        s, a = divmod(row, n_a)
        for col, p in zip(T.indices[T.indptr[row]:T.indptr[row + 1]], T.data[T.indptr[row]:T.indptr[row + 1]]):
            lines.append(f"T: {anames[a]} : {model.states[s]} : {model.states[col]} {_fmt(p)}")
    for row in range(O.shape[0]):
        a, s = divmod(row, n_s)
        for col, p in zip(O.indices[O.indptr[row]:O.indptr[row + 1]], O.data[O.indptr[row]:O.indptr[row + 1]]):
            lines.append(f"O: {anames[a]} : {model.states[s]} : {joint_observation_name(model, int(col))} {_fmt(p)}")
    for s, a in zip(*np.nonzero(model.R)):
        lines.append(f"R: {anames[a]} : {model.states[s]} {_fmt(model.R[s, a])}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> ModelSpec:
    """Parse model text; raises ModelError with a line number on bad input."""
    header: dict[str, tuple[int, str]] = {}
    actions: dict[int, tuple[int, list[str]]] = {}
    observations: dict[int, tuple[int, list[str]]] = {}
    body: list[tuple[int, str, str]] = []
    defaults: dict[str, str] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise ModelError(f"expected 'key: value', got {line!r}", lineno)
        key = key.strip()
        rest = rest.strip()
        m = re.fullmatch(r"(actions|observations)\[(\d+)\]", key)
        if m:
            names = rest.split()
            _check_names(names, lineno)
            target = actions if m.group(1) == "actions" else observations
            idx = int(m.group(2))
            if idx in target:
                raise ModelError(f"duplicate {key}", lineno)
            target[idx] = (lineno, names)
        elif key in ("agents", "states", "horizon", "discount", "start"):
            if key in header:
                raise ModelError(f"duplicate header {key!r}", lineno)
            header[key] = (lineno, rest)
        elif key in ("T", "O", "R"):
            body.append((lineno, key, rest))
        elif key in ("default_T", "default_O"):
            allowed = ("identity", "uniform") if key == "default_T" else ("uniform",)
            if rest not in allowed:
                raise ModelError(f"{key} must be one of {allowed}, got {rest!r}", lineno)
            defaults[key] = rest
        else:
            raise ModelError(f"unknown directive {key!r}", lineno)

    for key in ("agents", "states", "start"):
        if key not in header:
            raise ModelError(f"missing header {key!r}")
    ln, txt = header["agents"]
    try:
        n = int(txt)
    except ValueError:
        raise ModelError(f"agents must be an integer, got {txt!r}", ln) from None
    if n < 1:
        raise ModelError("agents must be >= 1", ln)
    ln, txt = header["states"]
    states = txt.split()
    _check_names(states, ln)
    if len(set(states)) != len(states):
        raise ModelError("duplicate state name", ln)
    for table, what in ((actions, "actions"), (observations, "observations")):
        if set(table) != set(range(n)):
            raise ModelError(f"{what}[i] must be given for exactly i = 0..{n - 1}, got {sorted(table)}")
        for idx, (ln, names) in table.items():
            if not names:
                raise ModelError(f"{what}[{idx}] is empty", ln)
            if len(set(names)) != len(names):
                raise ModelError(f"duplicate name in {what}[{idx}]", ln)

    horizon: int | None = 1
    if "horizon" in header:
        ln, txt = header["horizon"]
        if txt == "infinite":
            horizon = None
        else:
            try:
                horizon = int(txt)
            except ValueError:
                raise ModelError(f"horizon must be an integer or 'infinite', got {txt!r}", ln) from None
    discount = 1.0
    if "discount" in header:
        ln, txt = header["discount"]
        try:
            discount = float(txt)
        except ValueError:
            raise ModelError(f"discount must be a number, got {txt!r}", ln) from None

    s_index = {s: i for i, s in enumerate(states)}
    a_names = [actions[i][1] for i in range(n)]
    o_names = [observations[i][1] for i in range(n)]
    a_index = [{a: j for j, a in enumerate(names)} for names in a_names]
    o_index = [{o: j for j, o in enumerate(names)} for names in o_names]
    a_radix = [len(x) for x in a_names]
    o_radix = [len(x) for x in o_names]
    n_s, n_a, n_o = len(states), math.prod(a_radix), math.prod(o_radix)

    def state_of(name: str, ln: int) -> int:
        try:
            return s_index[name]
        except KeyError:
            raise ModelError(f"unknown state {name!r}", ln) from None

    def joint_of(tokens: list[str], index, radix, ln: int, what: str) -> int:
        if len(tokens) != n:
            raise ModelError(f"joint {what} needs {n} names, got {len(tokens)}: {tokens}", ln)
        digits = []
        for i, tok in enumerate(tokens):
            try:
                digits.append(index[i][tok])
            except KeyError:
                raise ModelError(f"unknown {what} {tok!r} for agent {i}", ln) from None
        return _encode(digits, radix)

    def number(tok: str, ln: int) -> float:
        try:
            return float(tok)
        except ValueError:
            raise ModelError(f"expected a number, got {tok!r}", ln) from None

    ln, txt = header["start"]
    b0 = np.zeros(n_s)
    toks = txt.split()
    if toks == ["uniform"]:
        b0[:] = 1.0 / n_s
    elif len(toks) == 1 and "=" not in toks[0]:
        b0[state_of(toks[0], ln)] = 1.0
    else:
        for tok in toks:
            name, eq, val = tok.partition("=")
            if not eq:
                raise ModelError(f"start entries must be name=prob, got {tok!r}", ln)
            b0[state_of(name, ln)] += number(val, ln)

    t_entries: dict[tuple[int, int], float] = {}
    o_entries: dict[tuple[int, int], float] = {}
    R = np.zeros((n_s, n_a))
    r_seen: set[tuple[int, int]] = set()
    for ln, key, rest in body:
        parts = [p.strip() for p in rest.split(":")]
        if key == "T":
            if len(parts) != 3:
                raise ModelError("T needs 'T: <joint-action> : <s> : <s'> <prob>'", ln)
            a = joint_of(parts[0].split(), a_index, a_radix, ln, "action")
            s = state_of(parts[1], ln)
            tail = parts[2].split()
            if len(tail) != 2:
                raise ModelError("T needs '<s'> <prob>' after the last colon", ln)
            key2 = (s * n_a + a, state_of(tail[0], ln))
            if key2 in t_entries:
                raise ModelError("duplicate T entry", ln)
            t_entries[key2] = number(tail[1], ln)
        elif key == "O":
            if len(parts) != 3:
                raise ModelError("O needs 'O: <joint-action> : <s'> : <joint-obs> <prob>'", ln)
            a = joint_of(parts[0].split(), a_index, a_radix, ln, "action")
            s = state_of(parts[1], ln)
            tail = parts[2].split()
            if len(tail) != n + 1:
                raise ModelError(f"O needs {n} observation names and a probability", ln)
            o = joint_of(tail[:-1], o_index, o_radix, ln, "observation")
            key2 = (a * n_s + s, o)
            if key2 in o_entries:
                raise ModelError("duplicate O entry", ln)
            o_entries[key2] = number(tail[-1], ln)
        else:
            if len(parts) != 2:
                raise ModelError("R needs 'R: <joint-action> : <s> <value>'", ln)
            a = joint_of(parts[0].split(), a_index, a_radix, ln, "action")
            tail = parts[1].split()
            if len(tail) != 2:
                raise ModelError("R needs '<s> <value>' after the colon", ln)
            s = state_of(tail[0], ln)
            if (s, a) in r_seen:
                raise ModelError("duplicate R entry", ln)
            r_seen.add((s, a))
            R[s, a] = number(tail[1], ln)

    T = _fill_rows(t_entries, n_s * n_a, n_s, defaults.get("default_T"), "T",
                   identity=lambda row: row // n_a)
    O = _fill_rows(o_entries, n_a * n_s, n_o, defaults.get("default_O"), "O", identity=None)
    model = ModelSpec(
        states=tuple(states),
        actions=tuple(tuple(x) for x in a_names),
        observations=tuple(tuple(x) for x in o_names),
        b0=b0,
        T=T,
        O=O,
        R=R,
        horizon=horizon,
        discount=discount,
    )
    return check(model)


def _check_names(names: Iterable[str], lineno: int) -> None:
    for name in names:
        if not _NAME_RE.match(name) or name in ("*", "START", "uniform"):
            raise ModelError(f"invalid name {name!r}", lineno)


def _fill_rows(entries, n_rows, n_cols, default, what, identity) -> sp.csr_matrix:
    rows_present = np.zeros(n_rows, dtype=bool)
    r_idx = np.fromiter((k[0] for k in entries), dtype=np.int64, count=len(entries))
    c_idx = np.fromiter((k[1] for k in entries), dtype=np.int64, count=len(entries))
    vals = np.fromiter(entries.values(), dtype=float, count=len(entries))
    rows_present[r_idx] = True
    missing = np.flatnonzero(~rows_present)
    if missing.size:
        if default is None:
            raise ModelError(f"{what} row {int(missing[0])} has no entries and no default_{what} is given "
                             f"({missing.size} rows missing)")
        if default == "identity":
            r_idx = np.concatenate([r_idx, missing])
            c_idx = np.concatenate([c_idx, [identity(int(r)) for r in missing]])
            vals = np.concatenate([vals, np.ones(missing.size)])
        else:
            r_idx = np.concatenate([r_idx, np.repeat(missing, n_cols)])
            c_idx = np.concatenate([c_idx, np.tile(np.arange(n_cols), missing.size)])
            vals = np.concatenate([vals, np.full(missing.size * n_cols, 1.0 / n_cols)])
    m = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(n_rows, n_cols))
    m.sum_duplicates()
    m.sort_indices()
    return m


def all_joint(radices: Sequence[int]) -> Iterable[tuple[int, ...]]:
    return product(*(range(r) for r in radices))
