import numpy as np
import pytest

from abae.core import Dataset
from abae.stratifier import stratify
from abae.synthgen import default_suite, generate


@pytest.fixture(scope="session")
def suite():
    """Default four-stratum suite, generated once: (dataset, population, strata)."""
    dataset, pop = generate(default_suite())
    return dataset, pop, stratify(dataset, 4)


@pytest.fixture(scope="session")
def small_suite():
    dataset, pop = generate(default_suite(records_per_stratum=5000))
    return dataset, pop, stratify(dataset, 4)


def make_dataset(pred, value, proxy=None):
    n = len(pred)
    proxy = np.linspace(0, 1, n, endpoint=False) if proxy is None else proxy
    return Dataset(np.arange(n), proxy, value, pred)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance summary, then assert."""

    def _verdict(criterion: int, ok: bool, detail: str):
        ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return _verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
