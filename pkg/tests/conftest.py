import numpy as np
import pytest

from noisynp.datagen import load_scenario, sample_training, stream
from noisynp.model import make_dataset


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` logs one PASS/FAIL line and asserts ``ok``."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[_ACCEPTANCE].append(line)
        assert ok, line
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def case_a_binary():
    sc = load_scenario("binary-A")
    data, nm = sample_training(sc, stream(sc.seed, 0, "train"))
    return sc, data, nm


@pytest.fixture
def small_noisy(rng):
    """Two 1-D Gaussian classes with 10% symmetric label flips."""
    n = 300
    y = rng.integers(0, 2, n)
    X = rng.normal(loc=2.0 * y, size=n)[:, None]
    flip = rng.random(n) < 0.1
    return make_dataset(X, np.where(flip, 1 - y, y), K=2, true_labels=y)
