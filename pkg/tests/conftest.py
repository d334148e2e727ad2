import numpy as np
import pytest
from hypothesis import settings

from thinfilm.torus import TorusGrid

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def grid32():
    return TorusGrid(32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def band_limited(rng, grid, kband=3, mean=0.0):
    k = np.arange(-kband, kband + 1)
    f = np.full((grid.n, grid.n), float(mean))
    for a in k:
        for b in k:
            c, s = rng.standard_normal(2) / k.size
            ph = 2 * np.pi * (a * grid.X + b * grid.Y)
            f += c * np.cos(ph) + s * np.sin(ph)
    return f


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collect one summary line per acceptance criterion for the end-of-run report."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def log(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
        lines.append((number, line))
        print(line)

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
