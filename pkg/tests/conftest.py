import numpy as np
import pytest

from ucahrpe.channel import ArrayGeometry, FrequencyGrid, desk_scale_setup, full_scale_setup


@pytest.fixture
def desk():
    return desk_scale_setup()


@pytest.fixture
def full():
    return full_scale_setup()


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def point_array():
    """Degenerate single-point array (zero radius)."""
    return ArrayGeometry(0.0, 8), FrequencyGrid(1e9, 2e9, 64)


# one PASS/FAIL line per acceptance criterion, collected by the ``criterion``
# fixture and printed in the terminal summary
_CRITERIA: dict[int, str] = {}


class _Criterion:
    def __call__(self, number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line


@pytest.fixture
def criterion():
    return _Criterion()


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
