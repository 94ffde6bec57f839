import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from satlab.mixtures import canonical_mixture, counterexample_components, mix  # noqa: E402


@pytest.fixture(scope="session")
def comps():
    return counterexample_components()


@pytest.fixture(scope="session")
def canon():
    return canonical_mixture()


@pytest.fixture(scope="session")
def canon_dist(canon):
    return mix(canon)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
