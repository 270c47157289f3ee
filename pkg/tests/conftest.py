from __future__ import annotations

import numpy as np
import pytest

from parallel_soc.cell import CellParams
from parallel_soc.ocv import default_ocv, flat_ocv
from parallel_soc.pack import assemble

# the two cells of the simulation study (q in Ah)
TABLE1 = ((0.0025, 0.004, 1500.0, 2.3), (0.0015, 0.0035, 2000.0, 2.0))

_acceptance: dict[int, tuple[str, str]] = {}


def table1_cells(ocv=None):
    return [CellParams.from_ah(*row, ocv=ocv) for row in TABLE1]


@pytest.fixture
def ocv():
    return default_ocv()


@pytest.fixture
def cells():
    return table1_cells()


@pytest.fixture
def model(cells):
    return assemble(cells)


@pytest.fixture
def identical_model():
    c = CellParams.from_ah(*TABLE1[0])
    return assemble([c, c])


@pytest.fixture
def flat_model():
    return assemble(table1_cells(flat_ocv()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _acceptance[number] = (title, "PASS" if rep.outcome == "passed" else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, status = _acceptance[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}")
