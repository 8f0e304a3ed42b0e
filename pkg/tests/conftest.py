import numpy as np
import pytest

from aptf.datasets import SyntheticSpec, generate_synthetic, normalize_train_stats, split_chrono, windowize
from aptf.numeric import Rng


def small_data(seed=0, length=400, lookback=4, corrupt_frac=0.2):
    table = generate_synthetic(Rng(seed), SyntheticSpec(length=length, ar_coef=0.95, corrupt_frac=corrupt_frac))
    (train, val, test), _ = normalize_train_stats(*split_chrono(windowize(table, lookback, 1)))
    return train, val, test


@pytest.fixture
def data():
    return small_data()


@pytest.fixture(autouse=True)
def _quiet_clamp_warnings():
    import warnings

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*clamping", category=RuntimeWarning)
        yield


def params_equal(a, b):
    return all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; lines are echoed again in the terminal summary."""

    def record(number, passed, detail, status=None):
        status = status or ("PASS" if passed else "FAIL")
        line = f"criterion {number:>2}: {status:<4}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
