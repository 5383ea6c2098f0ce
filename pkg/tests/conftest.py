import math

import numpy as np
import pytest

from fucik_link.discrete_operator import Domain, build_operator
from fucik_link.fucik_spectrum import spectrum_for_level

_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str = "") -> None:
    _CRITERIA[number] = (bool(passed), detail)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def op1d():
    return build_operator(Domain.parse("interval:pi"), 511)


@pytest.fixture(scope="session")
def spec1d(op1d):
    return spectrum_for_level(op1d, 3)


@pytest.fixture(scope="session")
def op2d():
    return build_operator(Domain.parse("square:pi"), 63)


@pytest.fixture(scope="session")
def spec2d(op2d):
    return spectrum_for_level(op2d, 2)


@pytest.fixture(scope="session")
def small2d():
    op = build_operator(Domain.parse("square:pi"), 15)
    return spectrum_for_level(op, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def closed_form_1d(n: int, length: float = math.pi, count: int = 4) -> np.ndarray:
    h = length / (n + 1)
    k = np.arange(1, count + 1)
    return 4.0 / h**2 * np.sin(k * math.pi * h / (2 * length)) ** 2
