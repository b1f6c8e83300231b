import numpy as np
import pytest

from reflected_morse.geometry import make_chart, make_hypersurface, make_potential
from reflected_morse.morse import default_base_time, rebase
from reflected_morse.scenario_cli import _shoot, builtin_scenarios, load_scenario

# filled by the acceptance tests and printed once at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def euclid():
    return make_chart("euclidean", dim=2)


@pytest.fixture(scope="session")
def sphere():
    return make_chart("sphere-polar")


@pytest.fixture(scope="session")
def zero():
    return make_potential("zero", 2)


@pytest.fixture(scope="session")
def disk():
    return make_hypersurface("circle", 2, radius=1.0, boundary=True)


@pytest.fixture(scope="session")
def strip():
    return make_hypersurface("slab", 2, lower=0.0, upper=1.0, boundary=True)


@pytest.fixture(scope="session")
def suite():
    """Every built-in scenario with a single path, keyed by name: ``(scenario, path, bc)``."""
    out = {}
    for f in builtin_scenarios():
        sc = load_scenario(f)
        if sc.run in ("periodic-sweep", "solve", "shoot"):
            continue
        path = _shoot(sc)
        bc = "fixed"
        if sc.run == "index-periodic":
            path = rebase(path, default_base_time(path))
            bc = "periodic"
        out[sc.name] = (sc, path, bc)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
