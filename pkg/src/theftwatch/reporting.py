"""Report files: full JSON, a per-mode summary CSV and long-format plot data."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable

from .errors import DataError, UsageError
from .harness import WITH, PairedReport, SimulationReport
from .watchdog import EVENT_HEADER, WatchdogEvent

SUMMARY_COLUMNS = ["scenario", "mode", "precision", "recall", "positives", "filtered_pct", "invocations", "windows", "macs"]
PLOT_COLUMNS = ["scenario", "mode", "metric", "value"]
REPORT_FORMAT = "theftwatch-report"
REPORT_VERSION = 1


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def flatten(reports) -> list[SimulationReport]:
    out = []
    for r in reports:
        out.extend(r.reports if isinstance(r, PairedReport) else [r])
    return out


def summary_rows(reports: Iterable[SimulationReport]) -> list[list[str]]:
    return [
        [
            r.scenario, r.mode, _fmt(r.precision), _fmt(r.recall), _fmt(r.positives), _fmt(r.filtered_percent),
            _fmt(r.cost.invocations), _fmt(r.cost.windows), _fmt(r.cost.macs),
        ]
        for r in reports
    ]


def plot_rows(reports: Iterable[SimulationReport]) -> list[list[str]]:
    rows = []
    for r in reports:
        metrics = [
            ("precision", r.precision),
            ("recall", r.recall),
            ("positives", r.positives),
            ("missed", r.fn),
            ("invocations", r.cost.invocations),
            ("windows", r.cost.windows),
            ("macs", r.cost.macs),
        ]
        if r.mode == WITH and r.mac_reduction is not None:
            metrics.append(("mac_reduction", r.mac_reduction))
        if r.mode == WITH and r.filtered_percent is not None:
            metrics.append(("filtered_pct", r.filtered_percent))
        rows.extend([r.scenario, r.mode, name, _fmt(v)] for name, v in metrics)
    return rows


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def emit_report(reports, out_dir, formats=("json", "csv")) -> dict[str, Path]:
    """Write ``report.json``, ``summary.csv`` and ``plot_data.csv`` under ``out_dir``."""
    flat = flatten(reports)
    if not flat:
        raise UsageError("no reports to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    if "json" in formats:
        doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION, "reports": [r.to_dict() for r in flat]}
        paths["json"] = out_dir / "report.json"
        paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if "csv" in formats:
        paths["summary"] = out_dir / "summary.csv"
        _write_csv(paths["summary"], SUMMARY_COLUMNS, summary_rows(flat))
        paths["plot_data"] = out_dir / "plot_data.csv"
        _write_csv(paths["plot_data"], PLOT_COLUMNS, plot_rows(flat))
    return paths


def load_report(path) -> list[SimulationReport]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"report not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format") != REPORT_FORMAT or doc.get("version") != REPORT_VERSION:
        raise DataError(f"{path}: not a {REPORT_FORMAT} v{REPORT_VERSION} file")
    return [SimulationReport.from_dict(d) for d in doc["reports"]]


def write_events(events: Iterable[WatchdogEvent], path) -> Path:
    path = Path(path)
    rows = (
        [e.parent_id, e.hour_index, _fmt(float(e.d_percent)), int(e.flag_after), int(e.evaluated), e.batch_size]
        for e in events
    )
    _write_csv(path, EVENT_HEADER, rows)
    return path
