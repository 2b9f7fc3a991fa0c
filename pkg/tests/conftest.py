from hypothesis import settings

# compiled kernels make first calls slow; per-example deadlines would flake
settings.register_profile("serw", deadline=None, max_examples=60)
settings.load_profile("serw")

import numpy as np
import pytest

from serw.scaling import sweep_nu
from serw.tails import TailSpec
from serw.walk import ModelSpec

D1_GRID = np.logspace(-2, -8, 9)
D2_GRID = np.logspace(-2, -4, 9)

_SWEEPS = {
    "model1_d1": (ModelSpec.deterministic(1, 0.1), D1_GRID),
    "half_cauchy_d1": (ModelSpec.iid(1, 0.1, TailSpec.half_cauchy()), D1_GRID),
    "pareto_d1": (ModelSpec.iid(1, 0.1, TailSpec.pareto(0.5)), D1_GRID),
    "log_squared_d1": (ModelSpec.iid(1, 0.1, TailSpec.log_squared()), D1_GRID),
    "model1_d2": (ModelSpec.deterministic(2, 0.1), D2_GRID),
    "pareto_d2": (ModelSpec.iid(2, 0.1, TailSpec.pareto(0.5)), D2_GRID),
    "log_squared_d2": (ModelSpec.iid(2, 0.1, TailSpec.log_squared()), np.logspace(-1, -4, 9)),
}


@pytest.fixture(scope="session")
def sweeps():
    """Analytic sweeps shared across test modules, computed on first use."""
    cache = {}

    def get(name):
        if name not in cache:
            model, grid = _SWEEPS[name]
            cache[name] = sweep_nu(model, grid)
        return cache[name]

    return get


_REPORT = pytest.StashKey()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_REPORT, [])

    def record(label, ok, detail=""):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
