"""Meter ingestion, ZIP/capacity grouping and a synthetic residential baseline."""
from __future__ import annotations

import csv
import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParseError, UsageError

HOUR = timedelta(hours=1)
MIN_HOURS = 72
MAX_FILL_GAP = 3
DEFAULT_CAPACITY = 200
DEFAULT_TL = 0.03
SYNTHETIC_START = datetime(2020, 1, 1, tzinfo=timezone.utc)

SERIES_HEADER = ["timestamp", "kwh", "imputed"]
METADATA_HEADER = ["meter_id", "data_path", "zip"]


@dataclass(frozen=True, eq=False)
class MeterSeries:
    """Hourly kWh readings for one meter; reading k is at ``start + k`` hours."""

    meter_id: str
    start: datetime
    kwh: np.ndarray
    imputed: np.ndarray

    def __post_init__(self):
        kwh = np.asarray(self.kwh, dtype=np.float64)
        imputed = np.asarray(self.imputed, dtype=bool)
        if kwh.ndim != 1 or kwh.shape != imputed.shape:
            raise DataError(f"{self.meter_id}: kwh and imputed must be 1-d and equal length")
        if not np.all(np.isfinite(kwh)) or np.any(kwh < 0):
            raise DataError(f"{self.meter_id}: kwh values must be finite and non-negative")
        object.__setattr__(self, "kwh", kwh)
        object.__setattr__(self, "imputed", imputed)

    def __len__(self):
        return len(self.kwh)

    def __eq__(self, other):
        if not isinstance(other, MeterSeries):
            return NotImplemented
        return (
            self.meter_id == other.meter_id
            and self.start == other.start
            and np.array_equal(self.kwh, other.kwh)
            and np.array_equal(self.imputed, other.imputed)
        )

    @property
    def end(self) -> datetime:
        return self.start + len(self) * HOUR

    def slice(self, lo: int, hi: int) -> "MeterSeries":
        return MeterSeries(self.meter_id, self.start + lo * HOUR, self.kwh[lo:hi], self.imputed[lo:hi])


@dataclass(frozen=True)
class MeterRecord:
    meter_id: str
    data_path: str
    zip: str


@dataclass(frozen=True)
class ParentGroup:
    parent_id: str
    zip: str
    child_ids: tuple[str, ...]
    tl_assumed: float = DEFAULT_TL
    tl_actual: float = DEFAULT_TL

    def __post_init__(self):
        if not self.child_ids:
            raise DataError(f"group {self.parent_id} has no children")
        if len(set(self.child_ids)) != len(self.child_ids):
            raise DataError(f"group {self.parent_id} lists a child twice")
        for name in ("tl_assumed", "tl_actual"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise DataError(f"group {self.parent_id}: {name}={value} outside [0, 1)")

    def __len__(self):
        return len(self.child_ids)


@dataclass
class Dataset:
    """Groups plus an aligned series per child meter."""

    groups: list[ParentGroup]
    series: dict[str, MeterSeries] = field(default_factory=dict)

    @property
    def meter_ids(self) -> list[str]:
        return [m for g in self.groups for m in g.child_ids]


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    if ts.minute or ts.second or ts.microsecond:
        raise ValueError(f"timestamp {text!r} is not on an hour boundary")
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:00:00Z")


def _check_header(path, header, expected):
    if header is None:
        raise ParseError(path, 1, "empty file, expected header " + ",".join(expected))
    if [h.strip() for h in header] != expected:
        raise ParseError(path, 1, f"header {header!r} != {','.join(expected)}")


def load_meter_series(path, meter_id: str | None = None, min_hours: int = MIN_HOURS) -> MeterSeries:
    """Read a ``timestamp,kwh,imputed`` CSV into a gap-free hourly series.

    Rows may arrive unordered. Runs of up to three missing hours are
    forward-filled and flagged as imputed; longer gaps, duplicate
    timestamps and negative readings raise ``DataError``.
    """
    path = Path(path)
    meter_id = meter_id or path.stem
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), SERIES_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(path, lineno, f"expected 3 fields, got {len(row)}")
            try:
                ts = _parse_timestamp(row[0])
                kwh = float(row[1])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            flag = row[2].strip()
            if flag not in ("0", "1"):
                raise ParseError(path, lineno, f"imputed must be 0 or 1, got {flag!r}")
            if not math.isfinite(kwh) or kwh < 0:
                raise DataError(f"{path}:{lineno}: kwh {row[1]!r} must be finite and >= 0")
            rows.append((ts, kwh, flag == "1", lineno))

    if not rows:
        raise DataError(f"{path}: no readings")
    rows.sort(key=lambda r: r[0])

    kwh, imputed = [rows[0][1]], [rows[0][2]]
    for (prev_ts, _, _, _), (ts, value, flag, lineno) in zip(rows, rows[1:]):
        step = (ts - prev_ts) // HOUR
        if step == 0:
            raise DataError(f"{path}:{lineno}: duplicate timestamp {format_timestamp(ts)}")
        missing = step - 1
        if missing > MAX_FILL_GAP:
            raise DataError(
                f"{path}:{lineno}: gap of {missing} hours before {format_timestamp(ts)}"
                f" exceeds fill limit {MAX_FILL_GAP}"
            )
        kwh.extend([kwh[-1]] * missing)
        imputed.extend([True] * missing)
        kwh.append(value)
        imputed.append(flag)

    if len(kwh) < min_hours:
        raise DataError(f"{path}: {len(kwh)} hours, need at least {min_hours}")
    return MeterSeries(meter_id, rows[0][0], np.array(kwh), np.array(imputed))


def write_meter_series(series: MeterSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for k, (value, flag) in enumerate(zip(series.kwh, series.imputed)):
            writer.writerow([format_timestamp(series.start + k * HOUR), repr(float(value)), int(flag)])


def load_metadata(path) -> list[MeterRecord]:
    path = Path(path)
    records, seen = [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), METADATA_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(path, lineno, f"expected 3 fields, got {len(row)}")
            meter_id, data_path, zip_code = (v.strip() for v in row)
            if not meter_id:
                raise DataError(f"{path}:{lineno}: empty meter_id")
            if not zip_code:
                raise DataError(f"{path}:{lineno}: meter {meter_id} has no zip")
            if meter_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate meter_id {meter_id}")
            seen.add(meter_id)
            records.append(MeterRecord(meter_id, data_path, zip_code))
    return records


def write_metadata(records: Iterable[MeterRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METADATA_HEADER)
        for r in records:
            writer.writerow([r.meter_id, r.data_path, r.zip])


def group_meters(
    records: Sequence[MeterRecord],
    capacity: int = DEFAULT_CAPACITY,
    tl_assumed: float = DEFAULT_TL,
    tl_actual: float = DEFAULT_TL,
) -> list[ParentGroup]:
    """Partition records by ZIP, then chunk each ZIP in metadata order.

    ZIPs appear in order of first occurrence; parent ids are ``<zip>-<chunk>``.
    """
    if capacity < 1:
        raise UsageError(f"capacity must be >= 1, got {capacity}")
    by_zip: OrderedDict[str, list[str]] = OrderedDict()
    for r in records:
        by_zip.setdefault(r.zip, []).append(r.meter_id)
    groups = []
    for zip_code, ids in by_zip.items():
        for chunk, lo in enumerate(range(0, len(ids), capacity)):
            groups.append(
                ParentGroup(f"{zip_code}-{chunk}", zip_code, tuple(ids[lo : lo + capacity]), tl_assumed, tl_actual)
            )
    return groups


def stable_hash(*parts) -> int:
    """64-bit digest of the parts; independent of PYTHONHASHSEED."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _daily_profile(rng: np.random.Generator) -> np.ndarray:
    hours = np.arange(24, dtype=np.float64)

    def bump(center, width):
        dist = np.abs(hours - center)
        dist = np.minimum(dist, 24 - dist)
        return np.exp(-0.5 * (dist / width) ** 2)

    base = rng.uniform(0.15, 0.5)
    morning = rng.uniform(0.3, 1.5) * bump(rng.uniform(6.5, 8.5), rng.uniform(0.8, 1.5))
    evening = rng.uniform(0.8, 2.5) * bump(rng.uniform(18.0, 21.0), rng.uniform(1.0, 2.0))
    return base + morning + evening


def generate_synthetic_baseline(
    n_meters: int, n_hours: int, seed: int, start: datetime = SYNTHETIC_START
) -> list[MeterSeries]:
    """Residential-looking hourly load with morning and evening peaks.

    Each meter draws its own profile, a slowly drifting day-level scale
    (AR(1) across days) and exponential noise, all from a per-meter child
    of ``seed`` so meters are independent and reproducible.
    """
    if n_meters < 1:
        raise UsageError(f"n_meters must be >= 1, got {n_meters}")
    if n_hours < MIN_HOURS:
        raise UsageError(f"n_hours must be >= {MIN_HOURS}, got {n_hours}")
    n_days = -(-n_hours // 24) + 1
    offset = start.hour
    out = []
    for idx, child in enumerate(np.random.SeedSequence(seed).spawn(n_meters)):
        rng = np.random.default_rng(child)
        profile = _daily_profile(rng)
        z = np.empty(n_days)
        z[0] = rng.standard_normal()
        rho = 0.8
        shocks = rng.standard_normal(n_days) * math.sqrt(1 - rho**2)
        for d in range(1, n_days):
            z[d] = rho * z[d - 1] + shocks[d]
        day_scale = np.clip(1.0 + 0.15 * z, 0.5, 1.6)
        t = np.arange(n_hours) + offset
        kwh = profile[t % 24] * day_scale[t // 24] + rng.exponential(0.08, n_hours)
        kwh = np.clip(kwh, 0.0, 10.0)
        out.append(MeterSeries(f"m{idx:05d}", start, kwh, np.zeros(n_hours, dtype=bool)))
    return out


def split_dataset(series: MeterSeries, eval_fraction: float, min_hours: int = MIN_HOURS):
    """Chronological split: the final ``eval_fraction`` of hours is held out."""
    if not 0.0 < eval_fraction < 1.0:
        raise UsageError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    n = len(series)
    n_eval = math.floor(n * eval_fraction + 1e-9)
    n_train = n - n_eval
    if n_eval < min_hours or n_train < min_hours:
        raise DataError(
            f"{series.meter_id}: split {n_train}/{n_eval} hours leaves a part shorter than {min_hours}"
        )
    return series.slice(0, n_train), series.slice(n_train, n)


def synthetic_dataset(
    n_groups: int,
    n_children: int,
    n_hours: int,
    seed: int,
    capacity: int = DEFAULT_CAPACITY,
    tl_assumed: float = DEFAULT_TL,
    tl_actual: float = DEFAULT_TL,
) -> tuple[list[MeterRecord], Dataset]:
    """Synthetic meters, ``n_children`` per ZIP, grouped like real metadata."""
    series = generate_synthetic_baseline(n_groups * n_children, n_hours, seed)
    records = [
        MeterRecord(s.meter_id, f"{s.meter_id}.csv", f"Z{k // n_children:04d}") for k, s in enumerate(series)
    ]
    groups = group_meters(records, capacity, tl_assumed, tl_actual)
    return records, Dataset(groups, {s.meter_id: s for s in series})


def load_dataset(
    metadata_path,
    capacity: int = DEFAULT_CAPACITY,
    tl_assumed: float = DEFAULT_TL,
    tl_actual: float = DEFAULT_TL,
) -> tuple[list[MeterRecord], Dataset]:
    """Load metadata and every referenced series, trimmed to their common span."""
    metadata_path = Path(metadata_path)
    records = load_metadata(metadata_path)
    series = {}
    for r in records:
        p = Path(r.data_path)
        if not p.is_absolute():
            p = metadata_path.parent / p
        series[r.meter_id] = load_meter_series(p, r.meter_id)
    if series:
        lo = max(s.start for s in series.values())
        hi = min(s.end for s in series.values())
        span = (hi - lo) // HOUR
        if span < MIN_HOURS:
            raise DataError(f"{metadata_path}: meters overlap for only {max(span, 0)} hours")
        series = {
            k: s.slice((lo - s.start) // HOUR, (lo - s.start) // HOUR + span) for k, s in series.items()
        }
    return records, Dataset(group_meters(records, capacity, tl_assumed, tl_actual), series)
