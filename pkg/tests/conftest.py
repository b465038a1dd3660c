import numpy as np
import pytest

from icx.io_formats import LabelVector
from icx.synthetic import SourceSpec, plant_dataset

THREE_SOURCES = ("laplace", "laplace", "uniform")


def split(ds, n_train):
    X, y, K = ds.features.data, ds.labels.values, ds.labels.K
    return (X[:n_train], LabelVector(y[:n_train], K),
            X[n_train:], LabelVector(y[n_train:], K))


@pytest.fixture(scope="session")
def planted64():
    """3 informative sources in 64-D, K=5, 4000 train + 2000 validation rows."""
    spec = SourceSpec(3, THREE_SOURCES, seed=0)
    return plant_dataset(spec, 6000, 64, 0.1, 5, seed=0)


@pytest.fixture(scope="session")
def planted8():
    spec = SourceSpec(3, THREE_SOURCES, seed=1)
    return plant_dataset(spec, 10_000, 8, 0.0, 5, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance line; returns the pass flag for asserting."""
    def record(number, passed, detail):
        line = "[%s] criterion %2d: %s" % ("PASS" if passed else "FAIL", number, detail)
        _CRITERIA[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
