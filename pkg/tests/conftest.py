import pytest

from magarc import sim


@pytest.fixture(scope="session")
def default_run():
    return sim.simulate(sim.Scenario(seed=0))


@pytest.fixture(scope="session")
def default_maps(default_run):
    return default_run.maps()


def pytest_terminal_summary(terminalreporter):
    from scenarios import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
