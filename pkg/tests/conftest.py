import numpy as np
import pytest

from luxsched.imaging import Decomposition


def random_decomposition(rng, h=24, w=20, amb_max=0.4, light_max=0.5, color=None):
    ambient = rng.uniform(0.0, amb_max, size=(h, w, 3))
    light_map = rng.uniform(0.0, light_max, size=(h, w))
    if color is None:
        color = rng.uniform(0.2, 1.0, size=3)
    color = np.asarray(color, dtype=np.float64)
    return Decomposition(ambient, light_map, color / color.sum())


def checkerboard(h, w, lo=0.3, hi=0.7):
    yy, xx = np.mgrid[0:h, 0:w]
    board = np.where((yy + xx) % 2 == 0, lo, hi)
    return np.repeat(board[..., None], 3, axis=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
