"""Synthetic theft injection with per-timestep ground truth."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, UsageError
from .meter_data import MeterSeries, ParentGroup, stable_hash

FACTOR_LOW, FACTOR_HIGH = 0.1, 0.8
SHIFT_HOURS = 4


class AttackType(enum.IntEnum):
    CONSTANT_SCALE = 1
    STEP_SCALE = 2
    ZERO = 3
    MEAN_CAP = 4
    MEAN_REPLACE = 5
    TIME_SHIFT = 6


@dataclass(frozen=True)
class TheftAssignment:
    meter_id: str
    attack: AttackType
    severity: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.severity <= 1.0:
            raise UsageError(f"severity {self.severity} outside [0, 1]")
        object.__setattr__(self, "attack", AttackType(self.attack))


@dataclass
class AttackContext:
    """Per-thief constants plus what a single-step attack needs to see.

    ``step_alpha`` is the fresh factor for the current step (attack 2) and
    ``history``/``t`` give the true series and position (attack 6).
    """

    alpha: float
    beta: float
    mean: float
    step_alpha: float = 1.0
    history: np.ndarray | None = None
    t: int = 0


def attack_fn(attack, x_t: float, ctx: AttackContext) -> float:
    try:
        attack = AttackType(attack)
    except ValueError:
        raise UsageError(f"unknown attack id {attack!r}; valid ids are 1..6") from None
    if attack is AttackType.CONSTANT_SCALE:
        return ctx.alpha * x_t
    if attack is AttackType.STEP_SCALE:
        return ctx.step_alpha * x_t
    if attack is AttackType.ZERO:
        return 0.0
    if attack is AttackType.MEAN_CAP:
        return min(x_t, ctx.beta * ctx.mean)
    if attack is AttackType.MEAN_REPLACE:
        return ctx.beta * ctx.mean
    # capped so a shifted evening peak never exceeds max(x_t, mean)
    earlier = ctx.history[max(ctx.t - SHIFT_HOURS, 0)]
    return min(earlier, max(x_t, ctx.mean))


def _attack_vector(attack: AttackType, x: np.ndarray, alpha, beta, step_alpha) -> np.ndarray:
    """Vectorized ``attack_fn`` over a whole series (every step rewritten)."""
    m = float(x.mean())
    if attack is AttackType.CONSTANT_SCALE:
        return alpha * x
    if attack is AttackType.STEP_SCALE:
        return step_alpha * x
    if attack is AttackType.ZERO:
        return np.zeros_like(x)
    if attack is AttackType.MEAN_CAP:
        return np.minimum(x, beta * m)
    if attack is AttackType.MEAN_REPLACE:
        return np.full_like(x, beta * m)
    idx = np.maximum(np.arange(len(x)) - SHIFT_HOURS, 0)
    return np.minimum(x[idx], np.maximum(x, m))


@dataclass(frozen=True, eq=False)
class TamperedSeries:
    meter_id: str
    reported: np.ndarray
    true_kwh: np.ndarray
    tampered: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, TamperedSeries):
            return NotImplemented
        return (
            self.meter_id == other.meter_id
            and np.array_equal(self.reported, other.reported)
            and np.array_equal(self.true_kwh, other.true_kwh)
            and np.array_equal(self.tampered, other.tampered)
        )

    def __len__(self):
        return len(self.reported)

    @classmethod
    def clean(cls, series: MeterSeries) -> "TamperedSeries":
        return cls(series.meter_id, series.kwh, series.kwh, np.zeros(len(series), dtype=bool))


def apply_theft(series: MeterSeries, assignment: TheftAssignment) -> TamperedSeries:
    """Tamper each step independently with probability ``severity``.

    The same seed yields the same uniforms regardless of severity, so the
    tampered set grows monotonically with severity.
    """
    rng = np.random.default_rng(assignment.seed)
    alpha = rng.uniform(FACTOR_LOW, FACTOR_HIGH)
    beta = rng.uniform(FACTOR_LOW, FACTOR_HIGH)
    n = len(series)
    u = rng.random(n)
    step_alpha = rng.uniform(FACTOR_LOW, FACTOR_HIGH, n)
    x = series.kwh
    mask = u < assignment.severity
    candidate = _attack_vector(assignment.attack, x, alpha, beta, step_alpha)
    reported = np.where(mask, candidate, x)
    return TamperedSeries(series.meter_id, reported, x, mask)


def thief_constants(assignment: TheftAssignment) -> tuple[float, float]:
    """The (alpha, beta) pair ``apply_theft`` draws for this assignment."""
    rng = np.random.default_rng(assignment.seed)
    return rng.uniform(FACTOR_LOW, FACTOR_HIGH), rng.uniform(FACTOR_LOW, FACTOR_HIGH)


@dataclass(frozen=True)
class ScenarioSpec:
    label: str
    severity_low: float
    severity_high: float
    thief_rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.severity_low <= self.severity_high <= 1.0:
            raise UsageError(f"severity bounds ({self.severity_low}, {self.severity_high}) invalid")
        if not 0.0 <= self.thief_rate <= 1.0:
            raise UsageError(f"thief_rate {self.thief_rate} outside [0, 1]")


HIGH_SEVERITY = (0.10, 0.95)
LOW_SEVERITY = (0.10, 0.20)
THIEF_RATES = {"h": 0.40, "m": 0.20, "l": 0.05}
SCENARIO_CODES = ("hh", "hm", "hl", "lh", "lm", "ll")


def scenario_spec(code: str, seed: int = 0) -> ScenarioSpec:
    """One cell of the severity x thief-rate matrix, e.g. ``"hl"``."""
    if code not in SCENARIO_CODES:
        raise UsageError(f"unknown scenario {code!r}; valid codes: {', '.join(SCENARIO_CODES)}")
    low, high = HIGH_SEVERITY if code[0] == "h" else LOW_SEVERITY
    return ScenarioSpec(code, low, high, THIEF_RATES[code[1]], seed)


def _rng(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([stable_hash(*parts)]))


def assign_thieves(group: ParentGroup, rate: float, seed: int) -> set[str]:
    if not 0.0 <= rate <= 1.0:
        raise UsageError(f"rate {rate} outside [0, 1]")
    u = _rng("thieves", seed, group.parent_id).random(len(group))
    return {c for c, draw in zip(group.child_ids, u) if draw < rate}


def sample_severity(spec: ScenarioSpec, meter_id: str, seed: int) -> float:
    u = _rng("severity", seed, meter_id).random()
    return spec.severity_low + (spec.severity_high - spec.severity_low) * u


def sample_attack(meter_id: str, seed: int) -> AttackType:
    return AttackType(int(_rng("attack", seed, meter_id).integers(1, 7)))


@dataclass(eq=False)
class ScenarioInstance:
    spec: ScenarioSpec
    groups: list[ParentGroup]
    series: dict[str, TamperedSeries]
    assignments: dict[str, TheftAssignment]
    start: datetime | None = None
    hour_offset: int = 0

    def __eq__(self, other):
        if not isinstance(other, ScenarioInstance):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.groups == other.groups
            and self.assignments == other.assignments
            and self.series.keys() == other.series.keys()
            and all(self.series[k] == other.series[k] for k in self.series)
        )

    @property
    def n_hours(self) -> int:
        return len(next(iter(self.series.values())))

    @property
    def thieves(self) -> list[str]:
        return list(self.assignments)

    def tampered_steps(self) -> int:
        return int(sum(ts.tampered.sum() for ts in self.series.values()))

    def manifest(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "thieves": [
                {"meter_id": a.meter_id, "attack": int(a.attack), "severity": a.severity, "seed": a.seed}
                for a in self.assignments.values()
            ],
        }


def _check_series(groups, series_map):
    for g in groups:
        for c in g.child_ids:
            if c not in series_map:
                raise DataError(f"no series for child {c} of group {g.parent_id}")


def _materialize(spec, groups, series_map, assignments) -> ScenarioInstance:
    tampered = {}
    for g in groups:
        for c in g.child_ids:
            s = series_map[c]
            tampered[c] = apply_theft(s, assignments[c]) if c in assignments else TamperedSeries.clean(s)
    first = series_map[groups[0].child_ids[0]] if groups else None
    start = first.start if first is not None else None
    return ScenarioInstance(spec, list(groups), tampered, assignments, start, start.hour if start else 0)


def build_scenario(
    groups: Sequence[ParentGroup], series_map: Mapping[str, MeterSeries], spec: ScenarioSpec
) -> ScenarioInstance:
    """Pick thieves per group, give each an attack and severity, tamper their series."""
    _check_series(groups, series_map)
    assignments = {}
    for g in groups:
        thieves = assign_thieves(g, spec.thief_rate, spec.seed)
        for c in g.child_ids:
            if c in thieves:
                assignments[c] = TheftAssignment(
                    c,
                    sample_attack(c, spec.seed),
                    sample_severity(spec, c, spec.seed),
                    stable_hash("assign", spec.seed, c) & 0xFFFFFFFF,
                )
    return _materialize(spec, groups, series_map, assignments)


def replay_manifest(
    manifest: dict, groups: Sequence[ParentGroup], series_map: Mapping[str, MeterSeries]
) -> ScenarioInstance:
    _check_series(groups, series_map)
    spec = ScenarioSpec(**manifest["spec"])
    assignments = {t["meter_id"]: TheftAssignment(**t) for t in manifest["thieves"]}
    return _materialize(spec, groups, series_map, assignments)
