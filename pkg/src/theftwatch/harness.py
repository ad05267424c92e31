"""Paired with/without-watchdog experiments over a materialized scenario.

Time is an absolute hour index into the evaluation horizon. Evaluation
instants are the hours whose hour-of-day equals ``eval_hour`` and that have
a full window of history behind them; the "day" belonging to an instant is
the 24 hours ending at (and including) it. The watchdog is fed from the
first hour of the first evaluated day, so the opening hours that cannot
fill a window are skipped in both modes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .energy import CostLedger, reduction_fraction, record_invocation
from .errors import UsageError
from .lstm import Detection, LstmModel, Window, predict_batch
from .meter_data import MeterSeries, ParentGroup
from .theft import ScenarioInstance, ScenarioSpec, build_scenario
from .watchdog import (
    HourlyReading,
    WatchdogConfig,
    WatchdogEvent,
    WatchdogState,
    evaluate_cycle,
    hourly_update,
    is_eval_instant,
    ops_per_update,
    synthesize_parent_reading,
)

WITH = "with_watchdog"
WITHOUT = "without_watchdog"
MODES = (WITH, WITHOUT)


@dataclass
class SimConfig:
    watchdog: WatchdogConfig = field(default_factory=WatchdogConfig)
    log_events: bool = False


@dataclass(frozen=True)
class IntervalConfusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    positives: int
    tp: int
    fp: int
    fn: int


@dataclass
class SimulationReport:
    scenario: str
    mode: str
    seed: int
    precision: float
    recall: float
    positives: int
    tp: int
    fp: int
    fn: int
    theft_windows: int
    evaluated_windows: int
    group_days: int
    interval: IntervalConfusion | None
    cost: CostLedger
    filtered_percent: float | None = None
    mac_reduction: float | None = None
    detections: tuple[Detection, ...] = field(default=(), compare=False, repr=False)
    events: list[WatchdogEvent] = field(default_factory=list, compare=False, repr=False)

    def evaluated(self) -> set[tuple[str, int]]:
        return {(d.meter_id, d.end_hour) for d in self.detections}

    def to_dict(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in (
                "scenario", "mode", "seed", "precision", "recall", "positives", "tp", "fp", "fn",
                "theft_windows", "evaluated_windows", "group_days", "filtered_percent", "mac_reduction",
            )
        }
        d["interval"] = None if self.interval is None else vars(self.interval).copy()
        d["cost"] = self.cost.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationReport":
        d = dict(d)
        interval = d.pop("interval")
        cost = d.pop("cost")
        return cls(
            **d,
            interval=None if interval is None else IntervalConfusion(**interval),
            cost=CostLedger.from_dict(cost),
        )


@dataclass
class PairedReport:
    scenario: str
    with_watchdog: SimulationReport
    without_watchdog: SimulationReport
    filtered_percent: float | None
    mac_reduction: float | None

    @property
    def reports(self) -> list[SimulationReport]:
        return [self.without_watchdog, self.with_watchdog]


def compute_metrics(detections: Iterable[Detection], truth: Mapping[tuple[str, int], bool]) -> Metrics:
    """Window-level precision/recall against every window in the horizon.

    ``truth`` covers all (meter, end_hour) windows, evaluated or not, so a
    theft window that was never examined counts as a false negative.
    """
    tp = fp = 0
    for d in detections:
        if d.outcome:
            if truth[(d.meter_id, d.end_hour)]:
                tp += 1
            else:
                fp += 1
    fn = sum(1 for v in truth.values() if v) - tp
    positives = tp + fp
    precision = tp / positives if positives else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Metrics(precision, recall, positives, tp, fp, fn)


def watchdog_interval_metrics(fired, theft) -> IntervalConfusion:
    fired = np.asarray(fired, dtype=bool)
    theft = np.asarray(theft, dtype=bool)
    if fired.shape != theft.shape:
        raise UsageError(f"flag grid {fired.shape} and theft grid {theft.shape} are misaligned")
    return IntervalConfusion(
        int(np.sum(fired & theft)),
        int(np.sum(fired & ~theft)),
        int(np.sum(~fired & theft)),
        int(np.sum(~fired & ~theft)),
    )


def evaluation_instants(n_hours: int, config: WatchdogConfig, hour_offset: int = 0) -> list[int]:
    L = config.window_len
    if n_hours < L + 24:
        raise UsageError(f"horizon of {n_hours} hours is shorter than window_len + 24 = {L + 24}")
    return [e for e in range(L - 1, n_hours) if is_eval_instant(e, config, hour_offset)]


def _any_in_span(flags: np.ndarray, ends: Sequence[int], span: int) -> np.ndarray:
    """For each row and end hour e, whether any flag is set in (e - span, e]."""
    csum = np.concatenate([np.zeros((flags.shape[0], 1), dtype=np.int64), np.cumsum(flags, axis=1)], axis=1)
    ends = np.asarray(ends)
    lo = np.maximum(ends + 1 - span, 0)
    return (csum[:, ends + 1] - csum[:, lo]) > 0


def run_simulation(
    instance: ScenarioInstance,
    model: LstmModel,
    mode: str,
    cfg: SimConfig | None = None,
    cache: dict | None = None,
) -> SimulationReport:
    """Advance every group through the horizon in one mode and score it.

    ``cache`` may map (meter_id, end_hour) to a Detection already computed
    for the same model; it only saves arithmetic, the cost ledger still
    charges every window the prediction unit is handed.
    """
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    cfg = cfg or SimConfig()
    wd = cfg.watchdog
    if model.decision_threshold != wd.decision_threshold:
        model = model.copy()
        model.decision_threshold = wd.decision_threshold
    L = wd.window_len
    offset = instance.hour_offset
    instants = evaluation_instants(instance.n_hours, wd, offset)
    first = max(0, instants[0] - 23) if instants else 0

    ledger = CostLedger()
    windows: list[Window] = []
    truth: dict[tuple[str, int], bool] = {}
    fired_grid, theft_grid, events = [], [], []

    for group in instance.groups:
        R = np.stack([instance.series[c].reported for c in group.child_ids])
        T = np.stack([instance.series[c].true_kwh for c in group.child_ids])
        tampered = np.stack([instance.series[c].tampered for c in group.child_ids])
        win_truth = _any_in_span(tampered, instants, L)
        for k, c in enumerate(group.child_ids):
            for j, e in enumerate(instants):
                truth[(c, e)] = bool(win_truth[k, j])

        if mode == WITHOUT:
            for e in instants:
                block = R[:, e + 1 - L : e + 1]
                batch = [Window(block[k], c, e) for k, c in enumerate(group.child_ids)]
                windows.extend(batch)
                record_invocation(ledger, len(batch), model, L)
            continue

        state = WatchdogState(group, wd)
        fired = []
        is_instant = set(instants)
        for h in range(first, instants[-1] + 1):
            p = synthesize_parent_reading(T[:, h], group.tl_actual)
            hourly_update(state, HourlyReading(p, R[:, h]))
            ledger.watchdog_ops += ops_per_update(len(group))
            batch = None
            if h in is_instant:
                fired.append(state.flag)
                batch = evaluate_cycle(state, h, R, offset)
                if batch:
                    windows.extend(batch)
                    record_invocation(ledger, len(batch), model, L)
            if cfg.log_events:
                events.append(
                    WatchdogEvent(group.parent_id, h, state.last_d, state.flag, h in is_instant, len(batch or ()))
                )
        fired_grid.append(fired)
        theft_grid.append(_any_in_span(tampered, instants, 24).any(axis=0))

    detections = _detect(model, windows, cache)
    m = compute_metrics(detections, truth)
    interval = watchdog_interval_metrics(fired_grid, theft_grid) if mode == WITH else None
    return SimulationReport(
        scenario=instance.spec.label,
        mode=mode,
        seed=instance.spec.seed,
        precision=m.precision,
        recall=m.recall,
        positives=m.positives,
        tp=m.tp,
        fp=m.fp,
        fn=m.fn,
        theft_windows=m.tp + m.fn,
        evaluated_windows=len(detections),
        group_days=len(instance.groups) * len(instants),
        interval=interval,
        cost=ledger,
        detections=tuple(detections),
        events=events,
    )


def _detect(model, windows, cache):
    if cache is None:
        return predict_batch(model, windows)
    todo = [w for w in windows if (w.meter_id, w.end_hour) not in cache]
    for d in predict_batch(model, todo):
        cache[(d.meter_id, d.end_hour)] = d
    return [cache[(w.meter_id, w.end_hour)] for w in windows]


def filtered_percent(positives_with: int, positives_without: int) -> float | None:
    if positives_without == 0:
        return None
    return 100.0 * (positives_without - positives_with) / positives_without


def run_paired(
    spec: ScenarioSpec,
    model: LstmModel,
    groups: Sequence[ParentGroup],
    series: Mapping[str, MeterSeries],
    cfg: SimConfig | None = None,
) -> PairedReport:
    """Both modes on one scenario instance; detections are shared via a cache."""
    instance = build_scenario(groups, series, spec)
    return run_paired_instance(instance, model, cfg)


def run_paired_instance(instance: ScenarioInstance, model: LstmModel, cfg: SimConfig | None = None) -> PairedReport:
    cache: dict = {}
    without = run_simulation(instance, model, WITHOUT, cfg, cache)
    with_ = run_simulation(instance, model, WITH, cfg, cache)
    fp = filtered_percent(with_.positives, without.positives)
    red = reduction_fraction(with_.cost, without.cost) if without.cost.macs > 0 else None
    for r in (with_, without):
        r.filtered_percent = fp
        r.mac_reduction = red
    return PairedReport(instance.spec.label, with_, without, fp, red)
