import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def central_diff(fun, w, h=1e-6):
    w = np.array(w, dtype=np.float64)
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (fun(w + e) - fun(w - e)) / (2 * h)
    return g


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one verdict line; all lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def emit(criterion: int, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
