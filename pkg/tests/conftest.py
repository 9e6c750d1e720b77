import numpy as np
import pytest

from demsr.raster_io import DemTile
from demsr.terrain_synth import SynthSpec, crop_tiles, diamond_square


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def synth_tile():
    return diamond_square(SynthSpec(k=6, seed=7, roughness=10.0, decay=0.5))


@pytest.fixture
def hr64(synth_tile):
    return crop_tiles(synth_tile, 64, 64)[0]


# acceptance bookkeeping: nodeid -> (criterion number, title) and nodeid -> outcome
_TITLES: dict[str, tuple] = {}
_OUTCOMES: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _TITLES[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _TITLES or report.when not in ("setup", "call"):
        return
    if _OUTCOMES.get(report.nodeid) in ("failed", "skipped"):
        return
    if report.when == "call" or report.outcome != "passed":
        _OUTCOMES[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    by_number: dict[int, list] = {}
    for nodeid, (number, title) in _TITLES.items():
        if nodeid in _OUTCOMES:
            by_number.setdefault(number, [title, []])[1].append(_OUTCOMES[nodeid])
    terminalreporter.section("acceptance criteria")
    for number in sorted(by_number):
        title, outcomes = by_number[number]
        if "failed" in outcomes:
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {number:2d} {verdict:4s}  {title}")
