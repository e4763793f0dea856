"""Multi-robot warehouse generator: robots fetch small and large boxes and push them to a drop-off cell.

The layout is a graph of named cells with four labelled regions (two
depots, the goal and a waiting room, one cell each).  A flat state holds
every robot's cell, every box's location (a depot, a carrier set, or
delivered) and, in the light scenario, the light colour.

Scenarios:

* ``NO_COMM``: six options per robot (three navigation, two pickups, drop).
* ``LOCAL_COMM``: adds go-to-waiting-room, wait and two send-signal options;
  a sent signal is heard by robots within the sensing radius.
* ``GLOBAL_SIGNAL``: adds go-to-waiting-room, two light switches usable in
  the depots and two turn-off-and-go options usable in the waiting room.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field, replace
from itertools import combinations, product
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from ..model import ModelSpec, build_model, check
from ..options import ROOT, OptionSet, OptionSpec, make_option
from ..policy import JointPolicy, PolicyTree

SCENARIOS = ("NO_COMM", "LOCAL_COMM", "GLOBAL_SIGNAL")
LIGHTS = ("off", "blue", "red")
SIZE_CODE = {"small": "S", "large": "L"}

DELIVERED = ("g",)


class WarehouseError(ValueError):
    pass


@dataclass(frozen=True)
class WarehouseConfig:
    """Declarative warehouse instance.  Regions are single named cells."""

    n_robots: int = 3
    cells: tuple[str, ...] = ("D1", "A1", "W", "A2", "D2", "B1", "B2", "B3", "G")
    edges: tuple[tuple[str, str], ...] = (
        ("D1", "A1"), ("A1", "W"), ("W", "A2"), ("A2", "D2"),
        ("A1", "B1"), ("W", "B2"), ("A2", "B3"), ("B1", "B2"), ("B2", "B3"), ("B2", "G"),
    )
    depot1: str = "D1"
    depot2: str = "D2"
    goal: str = "G"
    waiting: str = "W"
    start: tuple[tuple[str, ...], ...] = (("G",), ("G",), ("G",))
    boxes: tuple[tuple[str, tuple[str, ...]], ...] = (
        ("large", ("D1",)), ("small", ("D2",)), ("small", ("D2",)),
    )
    scenario: str = "NO_COMM"
    horizon: int | None = 10
    discount: float = 1.0
    nav_noise: float = 0.1
    push_noise: float = 0.25
    reward_small: float = 10.0
    reward_large: float = 20.0
    step_cost: float = 0.1
    sense_radius: int = 0
    depot_from_waiting_only: bool = True
    max_states: int = 500_000

    def regions(self) -> dict[str, str]:
        return {"D1": self.depot1, "D2": self.depot2, "G": self.goal, "W": self.waiting}


def mini_config(scenario: str = "NO_COMM", **overrides) -> WarehouseConfig:
    """Two robots on five cells: a hub W next to both depots, depot 1 one step from the goal and
    depot 2 two steps away through corridor C.  Depot 1 holds a small and a large box, depot 2 a
    small one, so a robot sent alone to depot 1 has useful work before help arrives."""
    cfg = WarehouseConfig(
        n_robots=2,
        cells=("W", "D1", "D2", "C", "G"),
        edges=(("W", "D1"), ("W", "D2"), ("D1", "G"), ("D2", "C"), ("C", "G")),
        start=(("W",), ("W",)),
        boxes=(("small", ("D1",)), ("large", ("D1",)), ("small", ("D2",))),
        scenario=scenario,
        horizon=10,
    )
    return replace(cfg, **overrides)


def tiny_config(scenario: str = "NO_COMM", **overrides) -> WarehouseConfig:
    """Four cells in a ring, used where state counts must stay very small."""
    cfg = WarehouseConfig(
        n_robots=2,
        cells=("W", "D1", "D2", "G"),
        edges=(("W", "D1"), ("W", "D2"), ("D1", "G"), ("D2", "G")),
        start=(("G",), ("G",)),
        boxes=(("small", ("D1", "D2")), ("large", ("D1", "D2"))),
        scenario=scenario,
        horizon=6,
    )
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# config file


_KEYS_INT = {"robots": "n_robots", "sense_radius": "sense_radius", "max_states": "max_states"}
_KEYS_FLOAT = {"discount": "discount", "nav_noise": "nav_noise", "push_noise": "push_noise",
               "reward_small": "reward_small", "reward_large": "reward_large", "step_cost": "step_cost"}
_KEYS_CELL = {"depot1": "depot1", "depot2": "depot2", "goal": "goal", "waiting": "waiting"}


def parse_config(text: str) -> WarehouseConfig:
    """Read ``key: value`` lines; ``box:`` and ``start:`` may repeat.  ``#`` starts a comment.

    ``preset: mini|tiny|full`` first loads that preset, later keys override it.
    """
    base = WarehouseConfig()
    fields: dict = {}
    boxes: list = []
    starts: list = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise WarehouseError(f"line {ln}: expected 'key: value', got {raw!r}")
        key, val = (x.strip() for x in line.split(":", 1))
        toks = val.split()
        try:
            if key == "preset":
                presets = {"mini": mini_config(), "tiny": tiny_config(), "full": WarehouseConfig()}
                if val not in presets:
                    raise WarehouseError(f"line {ln}: unknown preset {val!r}")
                base = presets[val]
            elif key == "scenario":
                fields["scenario"] = val
            elif key == "cells":
                fields["cells"] = tuple(toks)
            elif key == "edges":
                pairs = []
                for tok in toks:
                    a, sep, b = tok.partition("-")
                    if not sep:
                        raise WarehouseError(f"line {ln}: edge {tok!r} should look like A-B")
                    pairs.append((a, b))
                fields["edges"] = tuple(pairs)
            elif key == "horizon":
                fields["horizon"] = None if val == "infinite" else int(val)
            elif key == "depot_from_waiting_only":
                fields["depot_from_waiting_only"] = val.lower() in ("1", "true", "yes")
            elif key == "box":
                if len(toks) < 2 or toks[0] not in SIZE_CODE:
                    raise WarehouseError(f"line {ln}: expected 'box: small|large <depot> [<depot> ...]'")
                boxes.append((toks[0], tuple(toks[1:])))
            elif key == "start":
                starts.append(tuple(toks))
            elif key in _KEYS_INT:
                fields[_KEYS_INT[key]] = int(val)
            elif key in _KEYS_FLOAT:
                fields[_KEYS_FLOAT[key]] = float(val)
            elif key in _KEYS_CELL:
                fields[_KEYS_CELL[key]] = val
            else:
                raise WarehouseError(f"line {ln}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, WarehouseError):
                raise
            raise WarehouseError(f"line {ln}: {exc}") from None
    if boxes:
        fields["boxes"] = tuple(boxes)
    if starts:
        fields["start"] = tuple(starts)
    cfg = replace(base, **fields)
    if not starts and len(cfg.start) != cfg.n_robots:
        cfg = replace(cfg, start=tuple(cfg.start[:1]) * cfg.n_robots)
    return cfg


def emit_config(cfg: WarehouseConfig) -> str:
    lines = [
        f"scenario: {cfg.scenario}",
        f"robots: {cfg.n_robots}",
        f"cells: {' '.join(cfg.cells)}",
        f"edges: {' '.join(f'{a}-{b}' for a, b in cfg.edges)}",
        f"depot1: {cfg.depot1}",
        f"depot2: {cfg.depot2}",
        f"goal: {cfg.goal}",
        f"waiting: {cfg.waiting}",
    ]
    lines += [f"start: {' '.join(s)}" for s in cfg.start]
    lines += [f"box: {size} {' '.join(deps)}" for size, deps in cfg.boxes]
    lines += [
        f"horizon: {'infinite' if cfg.horizon is None else cfg.horizon}",
        f"discount: {cfg.discount!r}",
        f"nav_noise: {cfg.nav_noise!r}",
        f"push_noise: {cfg.push_noise!r}",
        f"reward_small: {cfg.reward_small!r}",
        f"reward_large: {cfg.reward_large!r}",
        f"step_cost: {cfg.step_cost!r}",
        f"sense_radius: {cfg.sense_radius}",
        f"depot_from_waiting_only: {int(cfg.depot_from_waiting_only)}",
        f"max_states: {cfg.max_states}",
    ]
    return "\n".join(lines) + "\n"


def validate_config(cfg: WarehouseConfig) -> list[str]:
    """Config problems.  A large box with fewer than two robots is reported but still generatable."""
    out = []
    if cfg.scenario not in SCENARIOS:
        out.append(f"scenario {cfg.scenario!r} not in {SCENARIOS}")
    if cfg.n_robots < 1:
        out.append("n_robots must be >= 1")
    if len(set(cfg.cells)) != len(cfg.cells) or not cfg.cells:
        out.append("cells must be nonempty and distinct")
    for name in cfg.cells:
        if not re.fullmatch(r"[A-Za-z0-9]+", name):
            out.append(f"cell name {name!r} must be alphanumeric")
    cells = set(cfg.cells)
    for a, b in cfg.edges:
        if a not in cells or b not in cells:
            out.append(f"edge {a}-{b} names an unknown cell")
    regions = cfg.regions()
    for label, c in regions.items():
        if c not in cells:
            out.append(f"region {label} cell {c!r} is not a cell")
    if len(set(regions.values())) != 4:
        out.append("depot1, depot2, goal and waiting room must be distinct cells")
    if len(cfg.start) != cfg.n_robots:
        out.append(f"{len(cfg.start)} start entries for {cfg.n_robots} robots")
    for i, st in enumerate(cfg.start):
        if not st or any(c not in cells for c in st):
            out.append(f"robot {i} start {st} must name known cells")
    for b, (size, deps) in enumerate(cfg.boxes):
        if size not in SIZE_CODE:
            out.append(f"box {b}: size {size!r} must be small or large")
        if not deps or any(d not in (cfg.depot1, cfg.depot2) for d in deps):
            out.append(f"box {b}: initial locations {deps} must be depots")
        if size == "large" and cfg.n_robots < 2:
            out.append(f"box {b}: large box needs at least 2 robots to be delivered (has {cfg.n_robots})")
    for p, name in ((cfg.nav_noise, "nav_noise"), (cfg.push_noise, "push_noise")):
        if not 0.0 <= p < 1.0:
            out.append(f"{name} must be in [0, 1), got {p}")
    if not out:
        lay = _Layout(cfg)
        for label, c in regions.items():
            if any(lay.dist[lay.index[x]][lay.index[c]] >= _INF for x in cfg.cells):
                out.append(f"region {label} is not reachable from every cell")
    return out


# ---------------------------------------------------------------------------
# layout


_INF = 10**9


class _Layout:
    def __init__(self, cfg: WarehouseConfig):
        self.cells = list(cfg.cells)
        self.index = {c: i for i, c in enumerate(self.cells)}
        n = len(self.cells)
        self.adj: list[list[int]] = [[] for _ in range(n)]
        for a, b in cfg.edges:
            ia, ib = self.index[a], self.index[b]
            if ib not in self.adj[ia]:
                self.adj[ia].append(ib)
                self.adj[ib].append(ia)
        for row in self.adj:
            row.sort()
        self.dist = [self._bfs(i) for i in range(n)]

    def _bfs(self, src: int) -> list[int]:
        d = [_INF] * len(self.cells)
        d[src] = 0
        q = deque([src])
        while q:
            u = q.popleft()
            for v in self.adj[u]:
                if d[v] == _INF:
                    d[v] = d[u] + 1
                    q.append(v)
        return d

    def next_hop(self, c: int, target: int) -> int:
        """Lowest-index neighbour on a shortest path, or ``c`` itself at the target."""
        if c == target or self.dist[c][target] >= _INF:
            return c
        for v in self.adj[c]:
            if self.dist[v][target] == self.dist[c][target] - 1:
                return v
        return c


# ---------------------------------------------------------------------------
# state space


def _box_values(cfg: WarehouseConfig, b: int) -> list[tuple]:
    size, deps = cfg.boxes[b]
    vals: list[tuple] = [("d", d) for d in dict.fromkeys(deps)]
    k = 2 if size == "large" else 1
    vals += [("c", pair) for pair in combinations(range(cfg.n_robots), k)]
    vals.append(DELIVERED)
    return vals


def _carriers_ok(boxes: Sequence[tuple]) -> bool:
    seen: set[int] = set()
    for loc in boxes:
        if loc[0] == "c":
            for r in loc[1]:
                if r in seen:
                    return False
                seen.add(r)
    return True


def count_states(cfg: WarehouseConfig) -> int:
    """Number of flat states, counted per box configuration without listing robot positions."""
    n_cells = len(cfg.cells)
    lights = len(LIGHTS) if cfg.scenario == "GLOBAL_SIGNAL" else 1
    total = 0
    for boxes in product(*(_box_values(cfg, b) for b in range(len(cfg.boxes)))):
        if not _carriers_ok(boxes):
            continue
        pairs = sum(1 for loc in boxes if loc[0] == "c" and len(loc[1]) == 2)
        total += n_cells ** (cfg.n_robots - pairs)
    return total * lights


def enumerate_states(cfg: WarehouseConfig) -> list[tuple]:
    """All states as ``(robot cells, box locations, light)``; large-box carriers share a cell."""
    cells = cfg.cells
    lights = LIGHTS if cfg.scenario == "GLOBAL_SIGNAL" else ("off",)
    out = []
    for robots in product(cells, repeat=cfg.n_robots):
        for boxes in product(*(_box_values(cfg, b) for b in range(len(cfg.boxes)))):
            if not _carriers_ok(boxes):
                continue
            if any(loc[0] == "c" and len(loc[1]) == 2 and robots[loc[1][0]] != robots[loc[1][1]] for loc in boxes):
                continue
            for light in lights:
                out.append((robots, boxes, light))
    return out


def state_name(state: tuple) -> str:
    robots, boxes, light = state
    parts = []
    for loc in boxes:
        if loc[0] == "d":
            parts.append(loc[1])
        elif loc[0] == "c":
            parts.append("+".join(f"r{r}" for r in loc[1]))
        else:
            parts.append("done")
    return f"{'-'.join(robots)}/{','.join(parts) or 'none'}/{light}"


def parse_state_name(name: str) -> tuple:
    robots, boxes, light = name.split("/")
    locs: list[tuple] = []
    if boxes != "none":
        for part in boxes.split(","):
            if part == "done":
                locs.append(DELIVERED)
            elif part.startswith("r") and all(p[1:].isdigit() for p in part.split("+")):
                locs.append(("c", tuple(int(p[1:]) for p in part.split("+"))))
            else:
                locs.append(("d", part))
    return tuple(robots.split("-")), tuple(locs), light


# ---------------------------------------------------------------------------
# actions and observations


def action_names(scenario: str) -> list[str]:
    acts = ["move_D1", "move_D2", "move_G", "pick_S", "pick_L", "drop"]
    if scenario == "LOCAL_COMM":
        acts += ["move_W", "stay", "send_1", "send_2"]
    elif scenario == "GLOBAL_SIGNAL":
        acts += ["move_W", "light_blue", "light_red", "light_off"]
    return acts


@dataclass(frozen=True)
class LocalObs:
    cell: str
    box: str  # n / S / L: box seen on the floor of a depot
    hold: str  # n / S / L
    robot: int  # another robot within sensing radius
    heard: int = 0  # LOCAL_COMM: signal heard this step
    light: str = "x"  # GLOBAL_SIGNAL: light seen from the waiting room

    def name(self, scenario: str) -> str:
        base = f"{self.cell}_{self.box}_{self.hold}_{self.robot}"
        if scenario == "LOCAL_COMM":
            base += f"_h{self.heard}"
        elif scenario == "GLOBAL_SIGNAL":
            base += f"_l{self.light}"
        return base


def observation_alphabet(cfg: WarehouseConfig) -> list[LocalObs]:
    extra: list[dict] = [{}]
    if cfg.scenario == "LOCAL_COMM":
        extra = [{"heard": k} for k in (0, 1, 2)]
    elif cfg.scenario == "GLOBAL_SIGNAL":
        extra = [{"light": x} for x in ("x",) + LIGHTS]
    return [LocalObs(c, b, h, r, **e) for c in cfg.cells for b in "nSL" for h in "nSL" for r in (0, 1) for e in extra]


# ---------------------------------------------------------------------------
# generator


@dataclass
class Warehouse:
    """Generated instance plus the bookkeeping needed to interpret traces."""

    cfg: WarehouseConfig
    model: ModelSpec
    options: OptionSet
    states: list[tuple]
    obs: list[LocalObs]
    min_durations: dict[str, int] = field(default_factory=dict)

    def state(self, s: int) -> tuple:
        return self.states[s]


def gen_warehouse(cfg: WarehouseConfig) -> tuple[ModelSpec, OptionSet]:
    w = build_warehouse(cfg)
    return w.model, w.options


def build_warehouse(cfg: WarehouseConfig) -> Warehouse:
    problems = [p for p in validate_config(cfg) if "large box needs" not in p]
    if problems:
        raise WarehouseError("invalid warehouse config: " + "; ".join(problems))
    n_states = count_states(cfg)
    if n_states > cfg.max_states:
        raise WarehouseError(f"warehouse has {n_states} states, above the cap of {cfg.max_states}")
    lay = _Layout(cfg)
    states = enumerate_states(cfg)
    assert len(states) == n_states
    s_index = {st: i for i, st in enumerate(states)}
    acts = action_names(cfg.scenario)
    n = cfg.n_robots
    obs = observation_alphabet(cfg)
    obs_index = {o.name(cfg.scenario): k for k, o in enumerate(obs)}
    n_obs = len(obs)
    joint_actions = list(product(range(len(acts)), repeat=n))
    n_a = len(joint_actions)
    n_s = len(states)

    t_rows, t_cols, t_vals = [], [], []
    o_rows, o_cols, o_vals = [], [], []
    R = np.zeros((n_s, n_a))
    dyn = _Dynamics(cfg, lay, acts)
    for s, st in enumerate(states):
        for a, ja in enumerate(joint_actions):
            names = [acts[x] for x in ja]
            r, outcomes = dyn.step(st, names)
            R[s, a] = r
            row = s * n_a + a
            for st2, p in outcomes.items():
                t_rows.append(row)
                t_cols.append(s_index[st2])
                t_vals.append(p)
    for a, ja in enumerate(joint_actions):
        names = [acts[x] for x in ja]
        for s2, st2 in enumerate(states):
            o = 0
            for i in range(n):
                o = o * n_obs + obs_index[dyn.observe(st2, names, i).name(cfg.scenario)]
            o_rows.append(a * n_s + s2)
            o_cols.append(o)
            o_vals.append(1.0)
    T = sp.csr_matrix((t_vals, (t_rows, t_cols)), shape=(n_s * n_a, n_s))
    O = sp.csr_matrix((o_vals, (o_rows, o_cols)), shape=(n_a * n_s, n_obs**n))

    b0 = np.zeros(n_s)
    starts = list(product(*cfg.start))
    box_starts = list(product(*(tuple(dict.fromkeys(deps)) for _, deps in cfg.boxes)))
    lights0 = "off"
    for robots in starts:
        for deps in box_starts:
            st = (tuple(robots), tuple(("d", d) for d in deps), lights0)
            b0[s_index[st]] += 1.0 / (len(starts) * len(box_starts))

    obs_names = [o.name(cfg.scenario) for o in obs]
    model = build_model(
        [state_name(st) for st in states],
        [acts] * n,
        [obs_names] * n,
        b0, T, O, R,
        horizon=cfg.horizon,
        discount=cfg.discount,
    )
    check(model)
    per_agent, mins = _make_options(cfg, lay, model, obs)
    return Warehouse(cfg, model, OptionSet(model, per_agent), states, obs, mins)


class _Dynamics:
    def __init__(self, cfg: WarehouseConfig, lay: _Layout, acts: list[str]):
        self.cfg = cfg
        self.lay = lay
        self.acts = acts
        self.regions = cfg.regions()
        self.sizes = [size for size, _ in cfg.boxes]

    def _target(self, act: str) -> int | None:
        if act.startswith("move_"):
            return self.lay.index[self.regions[act[5:]]]
        return None

    def step(self, st: tuple, acts: list[str]) -> tuple[float, dict[tuple, float]]:
        cfg = self.cfg
        robots, boxes, light = st
        n = cfg.n_robots
        boxes = list(boxes)
        reward = -cfg.step_cost * n
        holding = {}
        for b, loc in enumerate(boxes):
            if loc[0] == "c":
                for r in loc[1]:
                    holding[r] = b
        # drops: any carrier dropping at the goal delivers the box
        for b, loc in enumerate(boxes):
            if loc[0] == "c" and any(acts[r] == "drop" and robots[r] == cfg.goal for r in loc[1]):
                boxes[b] = DELIVERED
                reward += cfg.reward_large if self.sizes[b] == "large" else cfg.reward_small
        busy = set(holding)
        # large pickups need two free robots in the same depot picking together
        by_cell: dict[str, list[int]] = {}
        for i in range(n):
            if i not in busy and acts[i] == "pick_L":
                by_cell.setdefault(robots[i], []).append(i)
        for cell, group in sorted(by_cell.items()):
            for b, loc in enumerate(boxes):
                if len(group) < 2:
                    break
                if loc == ("d", cell) and self.sizes[b] == "large":
                    pair = (group[0], group[1])
                    boxes[b] = ("c", pair)
                    busy.update(pair)
                    group = group[2:]
        for i in range(n):
            if i in busy or acts[i] != "pick_S":
                continue
            for b, loc in enumerate(boxes):
                if loc == ("d", robots[i]) and self.sizes[b] == "small":
                    boxes[b] = ("c", (i,))
                    busy.add(i)
                    break
        for i in range(n):
            if acts[i] in ("light_blue", "light_red") and robots[i] in (cfg.depot1, cfg.depot2):
                light = acts[i][6:]
            elif acts[i] == "light_off" and robots[i] == cfg.waiting:
                light = "off"
        # movement: independent coins per robot, one shared coin per large-box pair
        groups: list[tuple[tuple[int, ...], int, float]] = []
        paired = set()
        for b, loc in enumerate(boxes):
            if loc[0] == "c" and len(loc[1]) == 2 and st[1][b] == loc:
                i, j = loc[1]
                paired.update(loc[1])
                tgt = self._target(acts[i])
                if tgt is not None and acts[i] == acts[j]:
                    dest = self.lay.next_hop(self.lay.index[robots[i]], tgt)
                    if dest != self.lay.index[robots[i]]:
                        groups.append(((i, j), dest, cfg.push_noise))
        for i in range(n):
            if i in paired:
                continue
            tgt = self._target(acts[i])
            if tgt is None:
                continue
            dest = self.lay.next_hop(self.lay.index[robots[i]], tgt)
            if dest != self.lay.index[robots[i]]:
                groups.append(((i,), dest, cfg.nav_noise))
        out: dict[tuple, float] = {}
        boxes_t = tuple(boxes)
        for moves in product((True, False), repeat=len(groups)):
            p = 1.0
            pos = list(robots)
            for moved, (members, dest, noise) in zip(moves, groups):
                p *= (1.0 - noise) if moved else noise
                if moved:
                    for r in members:
                        pos[r] = self.lay.cells[dest]
            if p == 0.0:
                continue
            key = (tuple(pos), boxes_t, light)
            out[key] = out.get(key, 0.0) + p
        return reward, out

    def observe(self, st: tuple, acts: list[str], i: int) -> LocalObs:
        cfg = self.cfg
        robots, boxes, light = st
        cell = robots[i]
        seen = "n"
        if cell in (cfg.depot1, cfg.depot2):
            for b, loc in enumerate(boxes):
                if loc == ("d", cell):
                    seen = SIZE_CODE[self.sizes[b]]
                    break
        hold = "n"
        for b, loc in enumerate(boxes):
            if loc[0] == "c" and i in loc[1]:
                hold = SIZE_CODE[self.sizes[b]]
        ci = self.lay.index[cell]
        near = [j for j in range(cfg.n_robots)
                if j != i and self.lay.dist[ci][self.lay.index[robots[j]]] <= cfg.sense_radius]
        heard = 0
        if cfg.scenario == "LOCAL_COMM":
            sent = [int(acts[j][5:]) for j in near if acts[j].startswith("send_")]
            heard = min(sent) if sent else 0
        lt = "x"
        if cfg.scenario == "GLOBAL_SIGNAL" and cell == cfg.waiting:
            lt = light
        return LocalObs(cell, seen, hold, int(bool(near)), heard, lt)


# ---------------------------------------------------------------------------
# options


def option_names(scenario: str) -> list[str]:
    names = ["go-D1", "go-D2", "go-G", "pick-S", "pick-L", "drop"]
    if scenario == "LOCAL_COMM":
        names += ["go-W", "wait", "send-1", "send-2"]
    elif scenario == "GLOBAL_SIGNAL":
        names += ["go-W", "light-blue", "light-red", "off-go-D1", "off-go-D2"]
    return names


_NAV_TARGET = {"go-D1": "D1", "go-D2": "D2", "go-G": "G", "go-W": "W", "off-go-D1": "D1", "off-go-D2": "D2"}


@dataclass(frozen=True)
class _Context:
    option: str | None  # None for the episode start
    signal: str | None
    holding: bool
    at: str | None  # region label if known


def _signal_spec(cfg: WarehouseConfig, name: str):
    """(termination predicate, signal function) over LocalObs for option ``name``."""
    regions = cfg.regions()
    if name in ("go-D1", "go-D2", "off-go-D1", "off-go-D2"):
        cell = regions[_NAV_TARGET[name]]
        labels = {"n": "none", "S": "small", "L": "large"}
        return (lambda o: o.cell == cell), (lambda o: labels[o.box])
    if name == "go-G":
        return (lambda o: o.cell == cfg.goal), (lambda o: "arrived")
    if name == "go-W":
        if cfg.scenario == "GLOBAL_SIGNAL":
            return (lambda o: o.cell == cfg.waiting), (lambda o: o.light if o.light != "x" else "off")
        return (lambda o: o.cell == cfg.waiting), (lambda o: "robot" if o.robot else "alone")
    if name == "pick-S":
        return (lambda o: True), (lambda o: "held" if o.hold == "S" else "empty")
    if name == "pick-L":
        if cfg.n_robots > 2:
            return (lambda o: o.hold == "L" or (o.hold == "n" and o.box != "L")), \
                (lambda o: "held" if o.hold == "L" else "gone")
        return (lambda o: o.hold == "L"), (lambda o: "held")
    if name == "drop":
        return (lambda o: True), (lambda o: "done")
    if name == "wait":
        return (lambda o: bool(o.robot) or o.heard > 0), \
            (lambda o: f"heard{o.heard}" if o.heard else "robot")
    if name.startswith("send-") or name.startswith("light-"):
        return (lambda o: True), (lambda o: "done")
    raise KeyError(name)


def _successors(cfg: WarehouseConfig, names: list[str], ctx: _Context) -> list[str]:
    """Options that may follow ``ctx``, in declaration order."""
    scen = cfg.scenario
    out = set()
    if ctx.holding:
        out.add("drop" if ctx.at == "G" else "go-G")
    else:
        for k in ("D1", "D2"):
            if ctx.at == k:
                continue
            if scen == "LOCAL_COMM" and cfg.depot_from_waiting_only and ctx.at != "W":
                continue
            out.add(f"go-{k}")
        if scen != "NO_COMM" and ctx.at != "W":
            out.add("go-W")
        arrived = ctx.option in ("go-D1", "go-D2", "off-go-D1", "off-go-D2")
        if arrived and ctx.signal == "small":
            out.add("pick-S")
        if arrived and ctx.signal == "large":
            out.add("pick-L")
        if scen == "GLOBAL_SIGNAL":
            if arrived:
                out.update(("light-blue", "light-red"))
            if ctx.option in ("light-blue", "light-red"):
                out.add("pick-L")
            if ctx.at == "W":
                out.update(("off-go-D1", "off-go-D2"))
        if scen == "LOCAL_COMM" and ctx.at == "W":
            out.update(("send-1", "send-2"))
            if ctx.option != "wait":
                out.add("wait")
    return [m for m in names if m in out]


def _contexts(cfg: WarehouseConfig, name: str, signals: Sequence[str]) -> list[_Context]:
    holding = name in ("pick-S", "pick-L", "go-G")
    out = []
    for sig in signals:
        h = holding and sig in ("held", "arrived")
        if name in _NAV_TARGET:
            at = _NAV_TARGET[name]
        elif name in ("wait", "send-1", "send-2"):
            at = "W"
        elif name == "drop":
            at = "G"
        else:
            at = None  # somewhere in a depot, unknown which
        out.append(_Context(name, sig, h, at))
    return out


def _possible_sighting(cfg: WarehouseConfig, cell: str, signal: str | None) -> bool:
    """False when a depot-arrival signal names a box size that can never be in that depot."""
    size = {"small": "small", "large": "large"}.get(signal or "")
    if size is None:
        return True
    return any(sz == size and cell in deps for sz, deps in cfg.boxes)


def _make_options(cfg: WarehouseConfig, lay: _Layout, model: ModelSpec, obs: list[LocalObs]):
    names = option_names(cfg.scenario)
    regions = cfg.regions()
    specs: dict[str, tuple[Callable, Callable]] = {m: _signal_spec(cfg, m) for m in names}
    alphabets: dict[str, list[str]] = {}
    for m, (term, sig) in specs.items():
        alphabets[m] = sorted({sig(o) for o in obs if term(o)})
    root_ctx = _Context(None, None, False, None)
    succ: dict[_Context, list[str]] = {root_ctx: _successors(cfg, names, root_ctx)}
    for m in names:
        for ctx in _contexts(cfg, m, alphabets[m]):
            succ[ctx] = _successors(cfg, names, ctx)

    # cells each option may start from, to derive navigation lower bounds
    start_cells: dict[str, set[str]] = {m: set() for m in names}
    changed = True
    root_cells = {c for st in cfg.start for c in st}
    while changed:
        changed = False
        for ctx, nxt in succ.items():
            if ctx.option is None:
                cells = root_cells
            elif ctx.option in _NAV_TARGET:
                cell = regions[_NAV_TARGET[ctx.option]]
                cells = {cell} if _possible_sighting(cfg, cell, ctx.signal) else set()
            else:
                cells = start_cells[ctx.option]
            for m in nxt:
                if not cells <= start_cells[m]:
                    start_cells[m] |= cells
                    changed = True
    mins = {}
    for m in names:
        if m in _NAV_TARGET and start_cells[m]:
            tgt = lay.index[regions[_NAV_TARGET[m]]]
            mins[m] = max(1, min(lay.dist[lay.index[c]][tgt] for c in start_cells[m]))
        else:
            mins[m] = 1

    obs_names = [o.name(cfg.scenario) for o in obs]
    per_agent = []
    for i in range(cfg.n_robots):
        opts: list[OptionSpec] = []
        for m in names:
            term, sig = specs[m]
            policy = None
            if m in _NAV_TARGET:
                default = f"move_{_NAV_TARGET[m]}"
                if m.startswith("off-"):
                    policy = {nm: "light_off" for nm, o in zip(obs_names, obs) if o.light in ("blue", "red")}
            else:
                default = {"pick-S": "pick_S", "pick-L": "pick_L", "drop": "drop", "wait": "stay",
                           "send-1": "send_1", "send-2": "send_2", "light-blue": "light_blue",
                           "light-red": "light_red"}[m]
            terminating = [(nm, o) for nm, o in zip(obs_names, obs) if term(o)]
            init = [(ctx.option, ctx.signal) for ctx, nxt in succ.items() if ctx.option is not None and m in nxt]
            opts.append(make_option(
                model, i, m,
                policy=policy,
                default_action=default,
                termination={nm: 1.0 for nm, _ in terminating},
                signals={nm: sig(o) for nm, o in terminating},
                root=m in succ[root_ctx],
                initiation=init,
                min_duration=mins[m],
            ))
        per_agent.append(opts)
    return per_agent, mins


# ---------------------------------------------------------------------------
# hand-written policies


def rule_tree(options: OptionSet, agent: int, first: str, depth: int,
              prefer: Callable[[list[tuple[str, str]]], list[str]]) -> PolicyTree:
    """Tree of the given depth whose node after history ``path`` is the first applicable choice of
    ``prefer(path)``, falling back to the first applicable successor."""
    return _rule_build(options, agent, prefer, first, [], depth)


def _rule_build(options, agent, prefer, option: str, path: list[tuple[str, str]], d: int) -> PolicyTree:
    if d <= 1:
        return PolicyTree(option)
    children = {}
    for sig in options.signals(agent, option):
        ctx = (option, sig)
        allowed = options.successors(agent, ctx)
        if not allowed:
            continue
        p2 = path + [ctx]
        pick = next((m for m in prefer(p2) if m in allowed), allowed[0])
        children[sig] = _rule_build(options, agent, prefer, pick, p2, d - 1)
    return PolicyTree(option, children)


def rule_subtree(options: OptionSet, agent: int, context: tuple[str, str], depth: int, prefer) -> PolicyTree | None:
    """Rule tree entered right after ``context``, or None if nothing may follow it."""
    allowed = options.successors(agent, context)
    if not allowed:
        return None
    path = [context]
    pick = next((m for m in prefer(path) if m in allowed), allowed[0])
    return _rule_build(options, agent, prefer, pick, path, depth)


def _greedy(help_large: bool, tour: Sequence[str]):
    """Preferences of a robot that takes what it finds.

    After a delivery it heads to ``tour[0]``; finding a depot empty (or its
    small box taken) sends it on to the next depot of the tour.
    """
    def after(depot: str | None) -> str:
        if depot not in tour:
            return tour[0]
        return tour[(list(tour).index(depot) + 1) % len(tour)]

    def prefer(path: list[tuple[str, str]]) -> list[str]:
        opt, sig = path[-1]
        if sig == "large" and help_large:
            return ["pick-L"]
        if sig == "small":
            return ["pick-S"]
        if sig == "held":
            return ["go-G"]
        if opt == "go-G":
            return ["drop"]
        visited = [o[-2:] for o, _ in path if o.startswith(("go-D", "off-go-D"))]
        nxt = tour[0] if opt == "drop" else after(visited[-1] if visited else None)
        return [f"go-{nxt}", f"off-go-{nxt}", "go-W"]

    return prefer


def hand_policy(options: OptionSet, kind: str, depth: int) -> JointPolicy:
    """Hand-written joint policies for two or more robots.

    ``split``: robot 0 heads to depot 1, the others to depot 2, everyone
    pushes what it finds, waits at a large box for help, and after each
    delivery checks depot 1 then depot 2.
    ``both-D1`` / ``both-D2``: everyone starts at the same depot.
    ``never-help``: like split, but large boxes are ignored.
    """
    n = len(options)
    firsts: list[str]
    if kind in ("split", "never-help"):
        firsts = ["D1"] + ["D2"] * (n - 1)
    elif kind == "both-D1":
        firsts = ["D1"] * n
    elif kind == "both-D2":
        firsts = ["D2"] * n
    else:
        raise ValueError(f"unknown hand policy {kind!r}")
    trees = []
    for i, dep in enumerate(firsts):
        roots = options.successors(i, ROOT)
        first = f"go-{dep}" if f"go-{dep}" in roots else roots[0]
        trees.append(rule_tree(options, i, first, depth, _greedy(kind != "never-help", ("D1", "D2"))))
    return JointPolicy(tuple(trees))


BASELINES = ("both-D1", "both-D2", "never-help")


def _register_heuristic() -> None:
    from ..mbdp import HEURISTICS, PolicyHeuristic

    def factory(model: ModelSpec, options: OptionSet):
        depth = model.horizon or 20
        prefer = _greedy(True, ("D1", "D2"))
        return PolicyHeuristic(options, hand_policy(options, "split", depth), name="warehouse-split",
                               filler=lambda o, i, ctx, d: rule_subtree(o, i, ctx, d, prefer))

    HEURISTICS.setdefault("warehouse-split", factory)


_register_heuristic()


# ---------------------------------------------------------------------------
# trace predicates


def large_pickups(trace, cfg: WarehouseConfig) -> list[tuple[int, bool]]:
    """(step, carriers co-located before the lift) for every large-box pickup in a trace."""
    out = []
    large = [b for b, (size, _) in enumerate(cfg.boxes) if size == "large"]
    states = [parse_state_name(s.state) for s in trace.steps] + [parse_state_name(trace.final_state)]
    for t in range(len(states) - 1):
        before, after = states[t], states[t + 1]
        for b in large:
            if before[1][b][0] == "d" and after[1][b][0] == "c":
                i, j = after[1][b][1]
                out.append((t, before[0][i] == before[0][j] == before[1][b][1]))
    return out


def deliveries(trace, cfg: WarehouseConfig) -> dict[str, int]:
    """Number of small and large boxes delivered during a trace."""
    final = parse_state_name(trace.final_state)
    out = {"small": 0, "large": 0}
    for b, loc in enumerate(final[1]):
        if loc == DELIVERED:
            out[cfg.boxes[b][0]] += 1
    return out


def large_delivered_step(trace, cfg: WarehouseConfig) -> int | None:
    large = [b for b, (size, _) in enumerate(cfg.boxes) if size == "large"]
    states = [parse_state_name(s.state) for s in trace.steps] + [parse_state_name(trace.final_state)]
    for t in range(1, len(states)):
        for b in large:
            if states[t][1][b] == DELIVERED and states[t - 1][1][b] != DELIVERED:
                return t - 1
    return None


def split_start(trace) -> bool:
    """The robots' first options head to different depots."""
    first = trace.steps[0].options if trace.steps else []
    return len(set(first)) == len(first) and all(o.endswith(("D1", "D2")) for o in first)
