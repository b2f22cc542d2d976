import numpy as np
import pandas as pd
import pytest

from outagecast.panel import FeatureMeta, PanelDataset, TimeIndex, weather_category

START = pd.Timestamp("2023-04-01T00:00:00Z")


def make_panel(weather, outages=None, tracked=None, names=None, counties=None, start=START):
    """Panel from a (C, T, F) weather array; outages/tracked default to ramps."""
    weather = np.asarray(weather, dtype=float)
    if weather.ndim == 2:
        weather = weather[None]
    C, T, F = weather.shape
    names = names or [f"f{i}" for i in range(F)]
    counties = counties or [f"c{i}" for i in range(C)]
    if outages is None:
        outages = np.tile(np.arange(T, dtype=float), (C, 1))
    if tracked is None:
        tracked = np.asarray(outages, float) * 2.0 + 1.0
    meta = [FeatureMeta(n, "weather", weather_category(n)) for n in names]
    return PanelDataset(TimeIndex(start, T), counties, np.asarray(outages, float).reshape(C, T),
                        np.asarray(tracked, float).reshape(C, T), weather, meta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------------

_ACCEPTANCE: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    number, title = marker
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "tests": 0, "seconds": 0.0})
    if report.when == "call" or report.outcome != "passed":
        entry["tests"] += report.when == "call"
        entry["seconds"] += report.duration
        entry["ok"] &= report.outcome == "passed"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(
            f"criterion {number}: {status}  {e['title']} ({e['tests']} tests, {e['seconds']:.1f} s)"
        )
