import csv
import json

import pytest

from theftwatch.energy import CostLedger
from theftwatch.errors import DataError, UsageError
from theftwatch.harness import WITH, WITHOUT, IntervalConfusion, PairedReport, SimulationReport
from theftwatch.reporting import (
    PLOT_COLUMNS,
    SUMMARY_COLUMNS,
    emit_report,
    load_report,
    write_events,
)
from theftwatch.theft import SCENARIO_CODES
from theftwatch.watchdog import EVENT_HEADER, WatchdogEvent


def _report(code, mode, positives):
    interval = IntervalConfusion(3, 0, 1, 16) if mode == WITH else None
    cost = CostLedger(4, 40, 40 * 1_221_192, 0 if mode == WITHOUT else 480)
    return SimulationReport(code, mode, 1, 0.5, 0.25, positives, positives // 2, positives - positives // 2,
                            7, 10, 40, 20, interval, cost)


def _paired(code):
    w, o = _report(code, WITH, 6), _report(code, WITHOUT, 8)
    for r in (w, o):
        r.filtered_percent, r.mac_reduction = 25.0, 0.5
    return PairedReport(code, w, o, 25.0, 0.5)


def test_json_round_trip(tmp_path):
    reports = [_paired(c) for c in SCENARIO_CODES]
    paths = emit_report(reports, tmp_path)
    back = load_report(paths["json"])
    assert back == [r for p in reports for r in p.reports]


def test_summary_has_twelve_rows_and_exact_columns(tmp_path):
    paths = emit_report([_paired(c) for c in SCENARIO_CODES], tmp_path)
    lines = paths["summary"].read_text().splitlines()
    assert lines[0] == "scenario,mode,precision,recall,positives,filtered_pct,invocations,windows,macs"
    assert lines[0].split(",") == SUMMARY_COLUMNS
    rows = list(csv.DictReader(lines))
    assert len(rows) == 12
    assert rows[0]["mode"] == WITHOUT and rows[1]["mode"] == WITH
    assert rows[1]["filtered_pct"] == "25.000000"
    assert rows[1]["macs"] == str(40 * 1_221_192)


def test_plot_data_is_long_format(tmp_path):
    paths = emit_report([_paired("hl")], tmp_path)
    with open(paths["plot_data"]) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == PLOT_COLUMNS
    metrics = {(r["mode"], r["metric"]) for r in rows}
    assert (WITH, "mac_reduction") in metrics
    assert (WITHOUT, "mac_reduction") not in metrics


def test_absent_filtered_percent_is_blank(tmp_path):
    r = _report("hh", WITHOUT, 0)
    paths = emit_report([r], tmp_path)
    row = paths["summary"].read_text().splitlines()[1].split(",")
    assert row[SUMMARY_COLUMNS.index("filtered_pct")] == ""
    assert json.loads(paths["json"].read_text())["reports"][0]["filtered_percent"] is None


def test_emit_rejects_empty_and_load_rejects_foreign(tmp_path):
    with pytest.raises(UsageError):
        emit_report([], tmp_path)
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(DataError):
        load_report(tmp_path / "x.json")
    with pytest.raises(DataError):
        load_report(tmp_path / "missing.json")


def test_unwritable_path_is_os_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_report([_paired("hh")], blocker / "sub")


def test_events_csv(tmp_path):
    path = write_events([WatchdogEvent("Z0-0", 73, 4.5, False, True, 20)], tmp_path / "e.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == EVENT_HEADER
    assert lines[1] == "Z0-0,73,4.500000,0,1,20"


def test_figures_render(tmp_path):
    from theftwatch.plotting import render_figures

    reports = [r for c in SCENARIO_CODES for r in _paired(c).reports]
    paths = render_figures(reports, tmp_path / "fig")
    assert sorted(p.name for p in paths) == [
        "accuracy_high_severity.png", "accuracy_low_severity.png",
        "cost_high_severity.png", "cost_low_severity.png",
    ]
    assert all(p.stat().st_size > 1000 for p in paths)
