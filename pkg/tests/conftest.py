import numpy as np
import pytest

from smatch.dataset import Dataset
from smatch.simulation import generate, reference_scenario

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def reference():
    return reference_scenario()


@pytest.fixture(scope="session")
def reference_data(reference):
    d, po = generate(reference, 2000, 11)
    return d, po


def random_dataset(rng, n, k, p=2, responses=True):
    """Units spread over k arms (every arm non-empty) with shuffled string ids."""
    t = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
    rng.shuffle(t)
    X = rng.normal(size=(n, p))
    ids = [f"id{v:05d}" for v in rng.permutation(n)]
    r = rng.normal(size=n) if responses else None
    return Dataset.from_arrays(X, t.tolist(), responses=r, ids=ids, levels=[f"a{i}" for i in range(k)])


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome, report.duration))
    elif "test_acceptance.py" in report.nodeid and report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, dur in _ACCEPTANCE:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({dur:.2f}s)")
