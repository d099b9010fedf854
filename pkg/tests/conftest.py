import pytest

from rhythmic.network import grid_scenario, toy_scenario
from rhythmic.rhythm import design_background_rhythm, rhythm_from_times


@pytest.fixture(scope="session")
def toy():
    return toy_scenario(0.5, 0.9)


@pytest.fixture(scope="session")
def toy_rhythm(toy):
    return rhythm_from_times(toy)


@pytest.fixture(scope="session")
def grid():
    return grid_scenario(0.4)


@pytest.fixture(scope="session")
def grid_rhythm(grid):
    return design_background_rhythm(grid)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
