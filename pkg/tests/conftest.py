import sys

import pytest

from idikit import catalog


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance criterion lines after the run, even unbuffered."""
    for name, module in list(sys.modules.items()):
        if name.rpartition(".")[2] == "test_acceptance":
            lines = getattr(module, "RESULTS", None)
            if lines:
                terminalreporter.section("acceptance criteria")
                for line in lines:
                    terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cos_t_entry():
    return catalog.get("cos_t")


@pytest.fixture(scope="session")
def damped_entry():
    return catalog.get("damped_volterra")


@pytest.fixture(scope="session")
def ball_entry():
    return catalog.get("ball_control_lq")


@pytest.fixture(scope="session")
def polytope_entry():
    return catalog.get("polytope_endpoint")
