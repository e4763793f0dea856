"""Small analytic fixtures used by the oracle tests."""

from __future__ import annotations

import numpy as np

from ..model import ModelSpec, build_model, check
from ..options import OptionSet, make_option

TOY_NAMES = ("chain-cooperate", "coin-coord", "fig3-shape", "det-counter")


def gen_toy(name: str) -> tuple[ModelSpec, OptionSet]:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown toy domain {name!r}; choose from {TOY_NAMES}") from None
    return builder()


def _fig3_shape() -> tuple[ModelSpec, OptionSet]:
    # One agent; m1 ends in local states s1/s2, m2 in s1/s2/s3.  Only m1 may
    # follow s1 or s3; both may follow s2.
    states = ["init", "s1", "s2", "s3"]
    actions = [["a1", "a2"]]
    obs = [["at_s1", "at_s2", "at_s3"]]
    T = np.zeros((4, 2, 4))
    T[:, 0, 1] = 0.6
    T[:, 0, 2] = 0.4
    T[:, 1, 1:] = 1.0 / 3.0
    O = np.zeros((2, 4, 3))
    O[:, 0, :] = 1.0 / 3.0  # never entered after a step
    for s in (1, 2, 3):
        O[:, s, s - 1] = 1.0
    R = np.zeros((4, 2))
    R[1, 0] = 2.0
    R[2, 1] = 3.0
    R[3, 0] = 1.0
    R[0, 1] = 0.5
    model = check(build_model(states, actions, obs, [1, 0, 0, 0], T, O, R, horizon=3))
    after_s2 = [("m1", "s2"), ("m2", "s2")]
    m1 = make_option(
        model, 0, "m1", default_action="a1",
        termination={"at_s1": 1.0, "at_s2": 1.0},
        signals={"at_s1": "s1", "at_s2": "s2"}, root=True,
        initiation=[("m1", "s1"), ("m2", "s1"), ("m2", "s3"), *after_s2],
    )
    m2 = make_option(
        model, 0, "m2", default_action="a2",
        termination={"at_s1": 1.0, "at_s2": 1.0, "at_s3": 1.0},
        signals={"at_s1": "s1", "at_s2": "s2", "at_s3": "s3"}, root=True,
        initiation=after_s2,
    )
    return model, OptionSet(model, [[m1, m2]])


def _chain_cooperate() -> tuple[ModelSpec, OptionSet]:
    # Two agents push a shared load along s0 -> s3; progress needs both pushing
    # at once, but pushes have random durations, so options desynchronize.
    # Each step pays the current progress index.
    states = ["s0", "s1", "s2", "s3"]
    actions = [["push", "rest"], ["push", "rest"]]
    obs = [["lo", "hi"], ["lo", "hi"]]
    n_s, n_a = 4, 4
    T = np.zeros((n_s, n_a, n_s))
    R = np.zeros((n_s, n_a))
    for s in range(n_s):
        for a in range(n_a):
            a0, a1 = divmod(a, 2)
            pushes = (a0 == 0) + (a1 == 0)
            if s == 3:
                T[s, a, 3] = 1.0
            elif pushes == 2:
                T[s, a, s + 1] = 0.8
                T[s, a, s] = 0.2
            elif pushes == 1:
                T[s, a, s] = 0.9
                T[s, a, max(s - 1, 0)] += 0.1
            else:
                T[s, a, s] = 1.0
            R[s, a] = float(s) - 0.3 * pushes
    O = np.zeros((n_a, n_s, 4))
    for a in range(n_a):
        for s in range(n_s):
            p_hi = 0.9 if s >= 2 else 0.2
            for o in range(4):
                o0, o1 = divmod(o, 2)
                q0 = p_hi if o0 == 1 else 1 - p_hi
                q1 = p_hi if o1 == 1 else 1 - p_hi
                O[a, s, o] = q0 * q1
    model = check(build_model(states, actions, obs, [1, 0, 0, 0], T, O, R, horizon=4))
    per_agent = []
    for i in range(2):
        push = make_option(model, i, "push", default_action="push",
                           termination={"hi": 1.0, "lo": 0.5}, default_signal="done", root=True,
                           initiation=[("push", "done"), ("rest", "done")])
        rest = make_option(model, i, "rest", default_action="rest",
                           default_termination=1.0, default_signal="done", root=True,
                           initiation=[("push", "done"), ("rest", "done")])
        per_agent.append([push, rest])
    return model, OptionSet(model, per_agent)


COIN_COORD_H2_VALUE = 0.42
"""Hand-computed optimum at h=2: both peek (-0.2), then call what they saw:
0.81 * (+1) + 0.19 * (-1)."""


def _coin_coord() -> tuple[ModelSpec, OptionSet]:
    # A hidden static coin; agents score +1 if both call it correctly, -1 if
    # both call and are wrong or disagree.  Peeking is 90% accurate and costs 0.1.
    states = ["heads", "tails"]
    acts = ["peek", "call_h", "call_t"]
    actions = [acts, acts]
    obs = [["saw_h", "saw_t", "none"], ["saw_h", "saw_t", "none"]]
    n_a = 9
    T = np.zeros((2, n_a, 2))
    T[0, :, 0] = 1.0
    T[1, :, 1] = 1.0
    R = np.zeros((2, n_a))
    for s in range(2):
        for a in range(n_a):
            a0, a1 = divmod(a, 3)
            r = -0.1 * ((a0 == 0) + (a1 == 0))
            if a0 != 0 and a1 != 0:
                correct = 1 if s == 0 else 2
                r += 1.0 if a0 == a1 == correct else -1.0
            R[s, a] = r
    O = np.zeros((n_a, 2, 9))
    for a in range(n_a):
        a_parts = divmod(a, 3)
        for s in range(2):
            per = []
            for ai in a_parts:
                if ai == 0:
                    right = np.zeros(3)
                    right[s] = 0.9
                    right[1 - s] = 0.1
                    per.append(right)
                else:
                    per.append(np.array([0.0, 0.0, 1.0]))
            O[a, s, :] = np.outer(per[0], per[1]).ravel()
    model = check(build_model(states, actions, obs, [0.5, 0.5], T, O, R, horizon=2))
    everywhere = [(p, sig) for p, sigs in (("peek", ("h", "t")), ("call_h", ("done",)), ("call_t", ("done",)))
                  for sig in sigs]
    per_agent = []
    for i in range(2):
        peek = make_option(model, i, "peek", default_action="peek",
                           termination={"saw_h": 1.0, "saw_t": 1.0}, signals={"saw_h": "h", "saw_t": "t"},
                           root=True, initiation=everywhere)
        call_h = make_option(model, i, "call_h", default_action="call_h", default_termination=1.0,
                             default_signal="done", root=True, initiation=everywhere)
        call_t = make_option(model, i, "call_t", default_action="call_t", default_termination=1.0,
                             default_signal="done", root=True, initiation=everywhere)
        per_agent.append([peek, call_h, call_t])
    return model, OptionSet(model, per_agent)


def _det_counter() -> tuple[ModelSpec, OptionSet]:
    # Fully deterministic: a shared counter 0..4 that each "inc" action bumps;
    # every step pays the counter value minus 0.5 per increment.  "inc" runs
    # for two steps, "hold" for one.
    states = ["c0", "c1", "c2", "c3", "c4"]
    actions = [["inc", "hold"], ["inc", "hold"]]
    obs = [["even", "odd"], ["even", "odd"]]
    T = np.zeros((5, 4, 5))
    R = np.zeros((5, 4))
    O = np.zeros((4, 5, 4))
    for s in range(5):
        for a in range(4):
            a0, a1 = divmod(a, 2)
            incs = (a0 == 0) + (a1 == 0)
            T[s, a, min(s + incs, 4)] = 1.0
            R[s, a] = s - 0.5 * incs
            parity = s % 2
            O[a, s, parity * 2 + parity] = 1.0
    model = check(build_model(states, actions, obs, [1, 0, 0, 0, 0], T, O, R, horizon=5))
    per_agent = []
    for i in range(2):
        inc = make_option(model, i, "inc", default_action="inc", default_termination=1.0,
                          default_signal="done", root=True, min_duration=2,
                          initiation=[("inc", "done"), ("hold", "done")])
        hold = make_option(model, i, "hold", default_action="hold", default_termination=1.0,
                           default_signal="done", root=True,
                           initiation=[("inc", "done"), ("hold", "done")])
        per_agent.append([inc, hold])
    return model, OptionSet(model, per_agent)


_BUILDERS = {
    "chain-cooperate": _chain_cooperate,
    "coin-coord": _coin_coord,
    "fig3-shape": _fig3_shape,
    "det-counter": _det_counter,
}
