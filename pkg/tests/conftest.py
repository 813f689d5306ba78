import dataclasses

import pytest

from healthshock.alive import solve_alive
from healthshock.config import paper_defaults, paper_defaults_dict, params_from_dict
from healthshock.dead import solve_dead


@pytest.fixture(scope="session")
def params():
    return paper_defaults()


@pytest.fixture(scope="session")
def dead(params):
    return solve_dead(params)


@pytest.fixture(scope="session")
def alive(params, dead):
    return solve_alive(params, dead)


@pytest.fixture
def tree():
    return paper_defaults_dict()


def single_state_tree(**changes):
    """One healthy state, no transitions; keyword args override top-level blocks."""
    d = paper_defaults_dict()
    d["prefs"]["k_a"] = [1.0]
    d["prefs"]["omega_a"] = [2.5]
    d["income"]["xi"] = [1.0]
    d["hazard"] = {"kind": "constant", "rates": [0.0], "loading": 0.0}
    d["transitions"] = []
    for key, value in changes.items():
        d[key] = value
    return d


def make_params(tree):
    return params_from_dict(tree)


def with_eta0(p, eta0):
    return dataclasses.replace(p, eta0=eta0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
