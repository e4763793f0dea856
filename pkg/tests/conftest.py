import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from macdec.domains import TOY_NAMES, build_warehouse, gen_toy, mini_config  # noqa: E402
from macdec.dp import solve_odp  # noqa: E402
from macdec.mbdp import RetentionConfig, solve_ombdp  # noqa: E402


@functools.lru_cache(maxsize=None)
def toy(name):
    return gen_toy(name)


@functools.lru_cache(maxsize=None)
def toy_odp(name):
    model, options = toy(name)
    return solve_odp(model, options)


@functools.lru_cache(maxsize=None)
def mini(scenario="NO_COMM", horizon=10):
    return build_warehouse(mini_config(scenario, horizon=horizon))


@functools.lru_cache(maxsize=None)
def mini_ombdp(horizon=8, heuristic="warehouse-split", max_trees=3, seed=0):
    w = mini(horizon=horizon)
    return solve_ombdp(w.model, w.options, cfg=RetentionConfig(max_trees, seed, heuristic))


@pytest.fixture(params=TOY_NAMES)
def toy_name(request):
    return request.param


# one line per acceptance criterion, repeated in the terminal summary so it survives output capture
ACCEPTANCE_LINES: list[str] = []


def verdict(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
