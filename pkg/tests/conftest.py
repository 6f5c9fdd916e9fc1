import numpy as np
import pytest

from posefield.graph import default_coco_graph
from posefield.scoring import load_kappas


@pytest.fixture(scope="session")
def graph():
    return default_coco_graph()


@pytest.fixture(scope="session")
def kappas():
    return load_kappas()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


def record_acceptance(name, passed, detail=""):
    _ACCEPTANCE.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
