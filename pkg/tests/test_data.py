import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amloda.data import (
    DataError,
    NormParams,
    PowerTrace,
    SynthConfig,
    clean_missing,
    denormalize,
    load_eco_csv,
    make_windows,
    normalize,
    save_trace_csv,
    split_train_test,
    synth_household,
)


def write(tmp_path, text, name="trace.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_three_rows(tmp_path):
    trace, labels = load_eco_csv(write(tmp_path, "timestamp,power_w\n0,100\n1,200\n2,50\n"))
    assert trace.values.tolist() == [100, 200, 50]
    assert trace.sample_period == 1
    assert labels is None


def test_load_full_day_with_labels(tmp_path):
    rows = "\n".join(f"{t},{100 + t % 7},{int(t > 40000)}" for t in range(86400))
    trace, labels = load_eco_csv(write(tmp_path, "timestamp,power_w,occupied\n" + rows + "\n"))
    assert len(trace) == 86400 and trace.sample_period == 1
    assert labels.sum() == 86400 - 40001


def test_load_iso_timestamps_and_missing(tmp_path):
    text = ("timestamp,power_w,occupied\n"
            "2012-07-01T00:00:00,100,1\n"
            "2012-07-01T00:00:01,,1\n"
            "2012-07-01T00:00:02,-1,0\n"
            "2012-07-01T00:00:04,30,0\n")
    trace, labels = load_eco_csv(write(tmp_path, text))
    # the gap at 00:00:03 becomes a missing sample as well
    assert np.isnan(trace.values[[1, 2, 3]]).all()
    assert trace.values[[0, 4]].tolist() == [100, 30]
    assert labels.tolist() == [1, 1, 0, -1, 0]
    assert trace.start_time == 1341100800


@pytest.mark.parametrize("text,match", [
    ("", "no samples"),
    ("timestamp,power_w\n", "no samples"),
    ("timestamp,power_w\n0,100\n1,abc\n", "row 3"),
    ("timestamp,power_w\n0,100\n0,100\n", "increasing"),
    ("timestamp,power_w\n5,100\n3,100\n", "increasing"),
    ("timestamp,power_w,occupied\n0,100,2\n", "row 2"),
])
def test_load_errors(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_eco_csv(write(tmp_path, text))


def test_save_load_round_trip(tmp_path):
    trace = PowerTrace([1.5, np.nan, 0.1 + 0.2], start_time=100, sample_period=1)
    path = tmp_path / "out.csv"
    save_trace_csv(path, trace, labels=[1, 0, 1])
    again, labels = load_eco_csv(path)
    np.testing.assert_array_equal(again.values, trace.values)
    assert labels.tolist() == [1, 0, 1]


def test_clean_missing():
    trace, report = clean_missing(PowerTrace([100, np.nan, 50]))
    assert trace.values.tolist() == [100, 50]
    assert report.removed == [1]
    assert json.loads(report.to_json()) == {"removed": [1]}
    assert report.apply(np.array([1, 0, 0])).tolist() == [1, 0]


def test_clean_missing_identity_and_empty():
    trace = PowerTrace([1.0, 2.0])
    out, report = clean_missing(trace)
    assert out is trace and report.removed == []
    with pytest.raises(DataError, match="empty after cleaning"):
        clean_missing(PowerTrace([np.nan, np.nan]))


def test_clean_missing_drops_missing_labels():
    trace, report = clean_missing(PowerTrace([1.0, 2.0, 3.0]), labels=np.array([0, -1, 1]))
    assert trace.values.tolist() == [1, 3] and report.removed == [1]


@given(arrays(np.float64, st.integers(1, 80), elements=st.one_of(st.just(np.nan), st.floats(0, 1e4))))
def test_clean_missing_is_ordered_subsequence(values):
    if np.isnan(values).all():
        return
    out, report = clean_missing(PowerTrace(values))
    np.testing.assert_array_equal(out.values, values[~np.isnan(values)])
    assert report.removed == sorted(report.removed)


def test_normalize_examples():
    v, p = normalize(PowerTrace([0, 50, 100]))
    assert v.tolist() == [0, 0.5, 1] and p == NormParams(0, 100)
    v, p = normalize(PowerTrace([42, 42]))
    assert v.tolist() == [0, 0] and p == NormParams(42, 42)
    assert normalize(PowerTrace([10, 20, 30]))[0].tolist() == [0, 0.5, 1]


def test_denormalize_examples():
    assert denormalize([0, 1], NormParams(0, 100)).tolist() == [0, 100]
    assert denormalize([0.5], NormParams(10, 30)).tolist() == [20]


@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(0, 1e5)))
def test_normalize_round_trip(values):
    v, p = normalize(PowerTrace(values))
    assert v.min() >= 0 and v.max() <= 1
    back = denormalize(v, p)
    assert np.all(np.abs(back - values) <= 1e-9 * np.maximum(np.abs(values), 1e-300) + 1e-9 * p.span)


def test_make_windows_counts():
    ds = make_windows(np.arange(5) / 4, [0, 0, 1, 1, 0], 3, 1)
    assert len(ds) == 3
    assert ds.y.tolist() == [1, 1, 0]
    ds = make_windows([0.1, 0.2, 0.3], [0, 1, 1], 3, 1)
    assert len(ds) == 1 and ds.X[0].tolist() == [0.1, 0.2, 0.3]
    with pytest.raises(DataError):
        make_windows([0.1, 0.2, 0.3], [0, 1, 1], 4, 1)


@given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 60), st.integers(0, 2**32 - 1))
def test_window_label_alignment(L, S, extra, seed):
    rng = np.random.default_rng(seed)
    n = L + extra
    values = rng.uniform(0, 1, n)
    labels = rng.integers(0, 2, n)
    ds = make_windows(values, labels, L, S)
    assert len(ds) == (n - L) // S + 1
    for k in range(len(ds)):
        end = k * S + L - 1
        assert ds.ends[k] == end
        assert ds.y[k] == labels[end]
        np.testing.assert_array_equal(ds.X[k], values[end - L + 1:end + 1])


def test_split_train_test():
    ds = make_windows(np.linspace(0, 1, 10), np.zeros(10), 1, 1)
    train, test = split_train_test(ds, 0.8)
    assert len(train) == 8 and len(test) == 2
    assert test.ends.min() > train.ends.max()
    train, test = split_train_test(make_windows([0.0, 1.0], [0, 1], 1, 1), 0.5)
    assert len(train) == len(test) == 1
    with pytest.raises(DataError):
        split_train_test(make_windows([0.5], [1], 1, 1), 0.8)
    with pytest.raises(DataError):
        split_train_test(ds, 1.0)


def test_synth_deterministic():
    cfg = SynthConfig(seed=7)
    a, la = synth_household(cfg)
    b, lb = synth_household(SynthConfig(seed=7))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(la, lb)
    c, _ = synth_household(SynthConfig(seed=8))
    assert not np.array_equal(a.values, c.values)


def test_synth_unoccupied_is_base_plus_noise():
    trace, labels = synth_household(SynthConfig(occupied_intervals=(), noise_std_w=2.0, base_load_w=100.0))
    assert labels.sum() == 0
    assert len(trace) == 86400
    assert abs(trace.values.mean() - 100.0) < 0.05
    assert abs(trace.values.std() - 2.0) < 0.05


def test_synth_full_day_occupied():
    trace, labels = synth_household(SynthConfig(occupied_intervals=((0, 86400),), day_count=2))
    assert labels.all() and len(trace) == 2 * 86400


def test_synth_labels_match_intervals():
    trace, labels = synth_household(SynthConfig(occupied_intervals=(("06:00", "07:30"),)))
    assert labels[6 * 3600 - 1] == 0 and labels[6 * 3600] == 1
    assert labels[7 * 3600 + 1799] == 1 and labels[7 * 3600 + 1800] == 0
    assert (trace.values >= 0).all()


def test_synth_rejects_overlap():
    with pytest.raises(DataError, match="overlap"):
        synth_household(SynthConfig(occupied_intervals=((0, 100), (50, 200))))


def test_synth_config_dict_round_trip():
    cfg = SynthConfig(seed=3, occupied_intervals=((10, 20),))
    assert SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_power_trace_rejects_negative():
    with pytest.raises(DataError):
        PowerTrace([1.0, -0.5])
    assert math.isclose(PowerTrace([0.1, 0.2]).total(), 0.30000000000000004)
