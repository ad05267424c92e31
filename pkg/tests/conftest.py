import numpy as np
import pytest

from theftwatch.meter_data import MeterSeries, ParentGroup, SYNTHETIC_START

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # a failing fixture fails the criterion too
    if call.when != "call" and call.excinfo is None:
        return
    number, text = marker.args
    passed = call.excinfo is None
    prev = _CRITERIA.get(number)
    ok = passed and (prev is None or prev[0])
    details = (prev[2] if prev else []) + [v for k, v in item.user_properties if k == "measured"]
    _CRITERIA[number] = (ok, text, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA, key=lambda n: (int("".join(c for c in str(n) if c.isdigit())), str(n))):
        ok, text, details = _CRITERIA[number]
        line = f"criterion {str(number):>3}: {'PASS' if ok else 'FAIL'}  {text}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)


def make_series(meter_id, values, start=SYNTHETIC_START):
    values = np.asarray(values, dtype=float)
    return MeterSeries(meter_id, start, values, np.zeros(len(values), dtype=bool))


def make_group(n, parent_id="Z0-0", tl=0.03, tl_actual=None):
    ids = tuple(f"c{k:03d}" for k in range(n))
    return ParentGroup(parent_id, "Z0", ids, tl, tl if tl_actual is None else tl_actual)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
