from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from theftwatch.errors import DataError, ParseError, UsageError
from theftwatch.meter_data import (
    MeterRecord,
    generate_synthetic_baseline,
    group_meters,
    load_dataset,
    load_meter_series,
    load_metadata,
    split_dataset,
    write_meter_series,
    write_metadata,
)

from conftest import make_series

T0 = datetime(2021, 3, 1, tzinfo=timezone.utc)


def _write(path, rows, header="timestamp,kwh,imputed"):
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


def _ts(k):
    return (T0 + timedelta(hours=k)).strftime("%Y-%m-%dT%H:00:00Z")


def test_load_72_consecutive_rows(tmp_path):
    path = _write(tmp_path / "m1.csv", [f"{_ts(k)},{0.5 + k / 100},0" for k in range(72)])
    s = load_meter_series(path)
    assert len(s) == 72
    assert s.meter_id == "m1"
    assert s.start == T0
    assert s.kwh[10] == pytest.approx(0.6)
    assert not s.imputed.any()


def test_single_missing_hour_is_forward_filled(tmp_path):
    # hours 0,1,2,4,5: hour 3 missing, should copy hour 2's reading
    rows = [f"{_ts(0)},1.0,0", f"{_ts(1)},2.0,0", f"{_ts(2)},3.0,1", f"{_ts(4)},5.0,0", f"{_ts(5)},6.0,0"]
    s = load_meter_series(_write(tmp_path / "gap.csv", rows), min_hours=1)
    assert s.kwh.tolist() == [1.0, 2.0, 3.0, 3.0, 5.0, 6.0]
    assert s.imputed.tolist() == [False, False, True, True, False, False]


def test_unsorted_rows_are_sorted(tmp_path):
    rows = [f"{_ts(k)},{k},0" for k in reversed(range(80))]
    s = load_meter_series(_write(tmp_path / "rev.csv", rows))
    assert s.kwh.tolist() == list(map(float, range(80)))


def test_three_hour_gap_fills_four_rejects(tmp_path):
    base = [f"{_ts(k)},1,0" for k in range(40)]
    ok = base + [f"{_ts(k)},1,0" for k in range(43, 80)]  # 40..42 missing
    assert len(load_meter_series(_write(tmp_path / "ok.csv", ok))) == 80
    bad = base + [f"{_ts(k)},1,0" for k in range(44, 80)]  # 40..43 missing
    with pytest.raises(DataError, match="gap of 4 hours"):
        load_meter_series(_write(tmp_path / "bad.csv", bad))


def test_negative_kwh_is_data_error(tmp_path):
    rows = [f"{_ts(k)},{-1 if k == 5 else 1},0" for k in range(72)]
    with pytest.raises(DataError, match=":7:"):
        load_meter_series(_write(tmp_path / "neg.csv", rows))


def test_duplicate_timestamp(tmp_path):
    rows = [f"{_ts(k)},1,0" for k in range(72)] + [f"{_ts(3)},1,0"]
    with pytest.raises(DataError, match="duplicate timestamp"):
        load_meter_series(_write(tmp_path / "dup.csv", rows))


def test_malformed_row_reports_line(tmp_path):
    rows = [f"{_ts(k)},1,0" for k in range(72)]
    rows[9] = f"{_ts(9)},abc,0"
    with pytest.raises(ParseError) as exc:
        load_meter_series(_write(tmp_path / "bad.csv", rows))
    assert exc.value.line == 11


def test_off_hour_timestamp_rejected(tmp_path):
    rows = [f"{_ts(k)},1,0" for k in range(72)]
    rows[0] = "2021-03-01T00:30:00Z,1,0"
    with pytest.raises(ParseError):
        load_meter_series(_write(tmp_path / "half.csv", rows))


def test_too_short_series(tmp_path):
    with pytest.raises(DataError, match="at least 72"):
        load_meter_series(_write(tmp_path / "short.csv", [f"{_ts(k)},1,0" for k in range(10)]))


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(0, 50, allow_nan=False), min_size=72, max_size=120),
    st.lists(st.booleans(), min_size=120, max_size=120),
)
def test_csv_round_trip(tmp_path_factory, values, flags):
    s = make_series("rt", values, start=T0)
    s = type(s)(s.meter_id, s.start, s.kwh, np.array(flags[: len(values)]))
    path = tmp_path_factory.mktemp("rt") / "rt.csv"
    write_meter_series(s, path)
    assert load_meter_series(path) == s


def test_metadata_loading(tmp_path):
    path = tmp_path / "metadata.csv"
    write_metadata([MeterRecord("a", "a.csv", "1000"), MeterRecord("b", "b.csv", "1000"), MeterRecord("c", "c.csv", "2000")], path)
    records = load_metadata(path)
    assert [r.meter_id for r in records] == ["a", "b", "c"]
    assert records[2].zip == "2000"


def test_metadata_duplicate_and_missing_zip(tmp_path):
    dup = tmp_path / "dup.csv"
    dup.write_text("meter_id,data_path,zip\na,a.csv,1\na,b.csv,1\n")
    with pytest.raises(DataError, match="duplicate meter_id"):
        load_metadata(dup)
    nozip = tmp_path / "nozip.csv"
    nozip.write_text("meter_id,data_path,zip\na,a.csv,\n")
    with pytest.raises(DataError, match="no zip"):
        load_metadata(nozip)


def test_metadata_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("meter_id,data_path,zip\n")
    assert load_metadata(path) == []


def _records(zips):
    return [MeterRecord(f"m{k}", f"m{k}.csv", z) for k, z in enumerate(zips)]


def test_grouping_450_in_one_zip():
    groups = group_meters(_records(["Z"] * 450), capacity=200)
    # ceil(450 / 200) = 3 chunks
    assert [len(g) for g in groups] == [200, 200, 50]
    assert [g.parent_id for g in groups] == ["Z-0", "Z-1", "Z-2"]
    assert groups[2].child_ids[0] == "m400"


def test_grouping_distinct_zips_and_capacity_one():
    assert [len(g) for g in group_meters(_records(list("abcde")), 200)] == [1] * 5
    assert len(group_meters(_records(["z"] * 7), capacity=1)) == 7
    assert group_meters([], 10) == []
    with pytest.raises(UsageError):
        group_meters(_records(["z"]), capacity=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["A", "B", "C", "D"]), max_size=60), st.integers(1, 12))
def test_grouping_is_a_deterministic_partition(zips, capacity):
    records = _records(zips)
    groups = group_meters(records, capacity)
    members = [c for g in groups for c in g.child_ids]
    assert sorted(members) == sorted(r.meter_id for r in records)
    assert len(members) == len(set(members))
    zip_of = {r.meter_id: r.zip for r in records}
    for g in groups:
        assert 1 <= len(g) <= capacity
        assert {zip_of[c] for c in g.child_ids} == {g.zip}
    assert group_meters(records, capacity) == groups


def test_group_tl_bounds():
    with pytest.raises(DataError):
        group_meters(_records(["z"]), 5, tl_assumed=1.0)


def test_synthetic_baseline_deterministic_and_distinct():
    a = generate_synthetic_baseline(2, 24 * 20, seed=9)
    b = generate_synthetic_baseline(2, 24 * 20, seed=9)
    assert all(x == y for x, y in zip(a, b))
    assert not np.array_equal(a[0].kwh, a[1].kwh)
    with pytest.raises(UsageError):
        generate_synthetic_baseline(1, 71, seed=0)


def _autocorr(x, lag):
    x = x - x.mean()
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_synthetic_baseline_daily_periodicity(seed):
    for s in generate_synthetic_baseline(5, 24 * 60, seed=seed):
        assert s.kwh.min() >= 0
        assert s.kwh.max() <= 10
        lags = range(1, 24 * 7 + 1)
        acf = [_autocorr(s.kwh, lag) for lag in lags]
        assert lags[int(np.argmax(acf))] == 24


def test_split_chronological():
    s = make_series("s", np.arange(1000.0))
    train, ev = split_dataset(s, 0.2)
    assert (len(train), len(ev)) == (800, 200)
    assert ev.start == s.start + timedelta(hours=800)
    assert np.array_equal(np.concatenate([train.kwh, ev.kwh]), s.kwh)


def test_split_too_short():
    with pytest.raises(DataError):
        split_dataset(make_series("s", np.ones(300)), 0.2)  # 60 eval hours
    with pytest.raises(UsageError):
        split_dataset(make_series("s", np.ones(300)), 1.0)


def test_load_dataset_aligns_series(tmp_path):
    write_meter_series(make_series("a", np.ones(100), start=T0), tmp_path / "a.csv")
    write_meter_series(make_series("b", np.arange(100.0), start=T0 + timedelta(hours=5)), tmp_path / "b.csv")
    write_metadata([MeterRecord("a", "a.csv", "1"), MeterRecord("b", "b.csv", "1")], tmp_path / "metadata.csv")
    records, ds = load_dataset(tmp_path / "metadata.csv")
    assert len(ds.groups) == 1
    assert {len(s) for s in ds.series.values()} == {95}
    assert ds.series["a"].start == ds.series["b"].start
    assert ds.series["b"].kwh[0] == 0.0
