"""Figures for the report command: cost and accuracy, with vs without watchdog."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import WITH, WITHOUT, SimulationReport  # noqa: E402

COLORS = {WITHOUT: "#4c72b0", WITH: "#dd8452"}
LABELS = {WITHOUT: "no watchdog", WITH: "with watchdog"}
SEVERITY_NAMES = {"h": "high", "l": "low"}

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _index(reports):
    table = {}
    for r in reports:
        table[(r.scenario, r.mode)] = r
    return table


def _codes(reports, severity):
    """Scenario codes of one severity, ordered many -> few thieves."""
    codes = {r.scenario for r in reports if r.scenario.startswith(severity)}
    return sorted(codes, key=lambda c: "hml".index(c[1]))


def _bars(ax, codes, table, value, ylabel):
    x = np.arange(len(codes))
    width = 0.38
    for k, mode in enumerate((WITHOUT, WITH)):
        vals = [value(table[(c, mode)]) if (c, mode) in table else np.nan for c in codes]
        ax.bar(x + (k - 0.5) * width, vals, width, color=COLORS[mode], label=LABELS[mode])
    ax.set_xticks(x)
    ax.set_xticklabels([f"sim {c}" for c in codes])
    ax.set_ylabel(ylabel)


def cost_figure(reports: list[SimulationReport], severity: str, path) -> Path:
    table = _index(reports)
    codes = _codes(reports, severity)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        _bars(ax, codes, table, lambda r: r.cost.macs / 1e9, "prediction-unit cost (GMAC)")
        ax.set_title(f"{SEVERITY_NAMES[severity]} severity: compute with/without watchdog")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def accuracy_figure(reports: list[SimulationReport], severity: str, path) -> Path:
    table = _index(reports)
    codes = _codes(reports, severity)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 3.0))
        _bars(axes[0], codes, table, lambda r: r.precision, "precision")
        _bars(axes[1], codes, table, lambda r: r.recall, "recall")
        _bars(axes[2], codes, table, lambda r: r.fn, "missed theft windows")
        axes[0].set_ylim(0, 1)
        axes[1].set_ylim(0, 1)
        axes[0].legend(frameon=False, loc="upper right")
        fig.suptitle(f"{SEVERITY_NAMES[severity]} severity: detection with/without watchdog")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def render_figures(reports: list[SimulationReport], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for sev in ("h", "l"):
        if not any(r.scenario.startswith(sev) for r in reports):
            continue
        paths.append(cost_figure(reports, sev, out_dir / f"cost_{SEVERITY_NAMES[sev]}_severity.png"))
        paths.append(accuracy_figure(reports, sev, out_dir / f"accuracy_{SEVERITY_NAMES[sev]}_severity.png"))
    return paths
