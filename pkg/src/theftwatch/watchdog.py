"""Per-group detection unit: hourly balance check with a latched flag."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .lstm import Window
from .meter_data import ParentGroup

# returned when the parent reads zero but children report consumption
ZERO_INFLOW_SENTINEL = math.inf


@dataclass(frozen=True)
class WatchdogConfig:
    threshold: float = 2.0
    eval_hour: int = 1
    window_len: int = 72
    decision_threshold: float = 0.5

    def __post_init__(self):
        if self.threshold < 0:
            raise UsageError(f"threshold must be >= 0, got {self.threshold}")
        if not 0 <= self.eval_hour <= 23:
            raise UsageError(f"eval_hour must be in 0..23, got {self.eval_hour}")
        if self.window_len < 1:
            raise UsageError(f"window_len must be >= 1, got {self.window_len}")


@dataclass(frozen=True)
class HourlyReading:
    p: float
    c: np.ndarray


@dataclass
class WatchdogState:
    group: ParentGroup
    config: WatchdogConfig = field(default_factory=WatchdogConfig)
    flag: bool = False
    hours_seen: int = 0
    last_d: float = 0.0


def compute_discrepancy(p: float, child_sum: float, tl: float) -> float:
    """Percent of parent inflow not accounted for by loss-corrected child readings."""
    if p == 0:
        return ZERO_INFLOW_SENTINEL if child_sum > 0 else 0.0
    return ((p - child_sum * (1 + tl)) / p) * 100


def synthesize_parent_reading(true_kwh, tl_actual: float) -> float:
    return float(np.sum(true_kwh)) * (1 + tl_actual)


def ops_per_update(n_children: int) -> int:
    """Scalar ops for one hourly check: n-1 adds, scale, subtract, divide, compare."""
    return n_children + 3


def hourly_update(state: WatchdogState, reading: HourlyReading) -> WatchdogState:
    """Fold one hour into ``state`` (in place); the flag only ever latches on here."""
    c = np.asarray(reading.c, dtype=np.float64)
    if c.shape != (len(state.group),):
        raise UsageError(
            f"group {state.group.parent_id} has {len(state.group)} children, reading has {c.size}"
        )
    d = compute_discrepancy(reading.p, float(np.sum(c)), state.group.tl_assumed)
    state.last_d = d
    if d >= state.config.threshold:
        state.flag = True
    state.hours_seen += 1
    return state


def is_eval_instant(now: int, config: WatchdogConfig, hour_offset: int = 0) -> bool:
    return (now + hour_offset) % 24 == config.eval_hour


def evaluate_cycle(
    state: WatchdogState, now: int, history: np.ndarray, hour_offset: int = 0
) -> list[Window] | None:
    """At the evaluation hour, hand over trailing windows if the flag is up.

    ``history`` is a (children, hours) array of reported readings indexed by
    absolute hour; ``hour_offset`` is the hour of day of index 0.
    Returns None when nothing fires. The flag is cleared when it fires.
    """
    if not is_eval_instant(now, state.config, hour_offset) or not state.flag:
        return None
    L = state.config.window_len
    history = np.asarray(history)
    if now + 1 < L or history.shape[1] <= now:
        raise DataError(
            f"group {state.group.parent_id}: need {L} hours of history at hour {now}"
        )
    block = history[:, now + 1 - L : now + 1]
    state.flag = False
    return [Window(block[k], meter_id, now) for k, meter_id in enumerate(state.group.child_ids)]


@dataclass(frozen=True)
class WatchdogEvent:
    parent_id: str
    hour_index: int
    d_percent: float
    flag_after: bool
    evaluated: bool
    batch_size: int


EVENT_HEADER = ["parent_id", "hour_index", "d_percent", "flag_after", "evaluated", "batch_size"]
