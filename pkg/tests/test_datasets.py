"""Dataset layer: CSV parsing and round trips, window enumeration, and the
synthetic generator's injection guarantees."""

import numpy as np
import pytest

from tsinr.datasets import (
    SeriesBundle,
    SynthSpec,
    base_signal,
    load_csv,
    load_labels,
    load_series_csv,
    synthesize,
    windows,
    write_bundle,
    write_labels,
    write_series_csv,
)
from tsinr.errors import ConfigError, DataError

from oracles import window_starts_bruteforce


def test_load_series_shape(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,4\n5,6\n7,8\n9,10\n")
    values, header = load_series_csv(p)
    assert header is None
    assert values.shape == (2, 5)
    assert np.array_equal(values[0], [1, 3, 5, 7, 9])


def test_load_series_detects_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("temp,pressure\n1,2\n3,4\n")
    values, header = load_series_csv(p)
    assert header == ["temp", "pressure"]
    assert values.shape == (2, 2)


def test_series_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(3, 40)) * 10.0 ** rng.integers(-8, 8, size=(3, 40))
    p = tmp_path / "rt.csv"
    write_series_csv(p, values, ["a", "b", "c"])
    back, header = load_series_csv(p)
    assert header == ["a", "b", "c"]
    assert np.array_equal(back, values)


def test_load_series_reports_bad_cell_position(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,oops\n")
    with pytest.raises(DataError, match="row 2, column 2"):
        load_series_csv(p)


def test_load_series_rejects_nan(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,nan\n")
    with pytest.raises(DataError, match="non-finite"):
        load_series_csv(p)


def test_load_series_rejects_ragged_rows(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(DataError, match="ragged"):
        load_series_csv(p)


def test_labels_round_trip_and_validation(tmp_path):
    p = tmp_path / "labels.csv"
    write_labels(p, np.array([0, 1, 1, 0], dtype=np.int8))
    assert np.array_equal(load_labels(p), [0, 1, 1, 0])
    p.write_text("0\n2\n")
    with pytest.raises(DataError, match="must be 0 or 1"):
        load_labels(p)


def test_bundle_rejects_label_length_mismatch(tmp_path):
    train = tmp_path / "train.csv"
    test = tmp_path / "test.csv"
    labels = tmp_path / "labels.csv"
    train.write_text("1\n2\n")
    test.write_text("1\n2\n3\n")
    labels.write_text("0\n1\n")
    with pytest.raises(DataError, match="label length"):
        load_csv(train, test, labels)


def test_bundle_rejects_channel_mismatch():
    with pytest.raises(DataError, match="channel mismatch"):
        SeriesBundle(name="x", train=np.zeros((2, 5)), test=np.zeros((3, 5)))


def test_windows_single_exact_fit():
    out = windows(np.zeros((1, 100)), 100, 100)
    assert len(out) == 1 and out[0].start == 0


def test_windows_non_overlapping_drops_partial():
    out = windows(np.zeros((1, 250)), 100, 100)
    assert [w.start for w in out] == [0, 100]


def test_windows_stride_one_tail():
    out = windows(np.zeros((1, 101)), 100, 1)
    assert [w.start for w in out] == [0, 1]


def test_windows_shorter_than_window_errors():
    with pytest.raises(DataError, match="shorter than window"):
        windows(np.zeros((1, 50)), 100, 100)


def test_windows_match_bruteforce_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(100):
        length = int(rng.integers(5, 200))
        t_len = int(rng.integers(1, length + 1))
        stride = int(rng.integers(1, 50))
        got = [w.start for w in windows(np.zeros((1, length)), t_len, stride)]
        assert got == window_starts_bruteforce(length, t_len, stride)


def test_windows_values_are_copies():
    series = np.arange(12.0).reshape(1, 12)
    w = windows(series, 4, 4)[0]
    w.values[0, 0] = 99.0
    assert series[0, 0] == 0.0


def test_synthesize_is_seed_deterministic():
    spec = SynthSpec(kind="shapelet", count=4, seed=11)
    a, b = synthesize(spec), synthesize(spec)
    assert np.array_equal(a.train, b.train)
    assert np.array_equal(a.test, b.test)
    assert np.array_equal(a.test_labels, b.test_labels)
    assert a.meta == b.meta


def test_synthesize_zero_count_is_clean():
    spec = SynthSpec(kind="global_point", count=0, seed=3)
    bundle = synthesize(spec)
    assert bundle.test_labels.sum() == 0
    assert bundle.meta["injections"] == []


def test_synthesize_label_sum_matches_request():
    points = synthesize(SynthSpec(kind="global_point", count=17, seed=5))
    assert points.test_labels.sum() == 17
    segs = synthesize(SynthSpec(kind="seasonal", count=3, segment_len=25, seed=5))
    assert segs.test_labels.sum() == 3 * 25


def test_synthesize_labels_match_injection_log_exactly():
    for kind in ("global_point", "contextual_point", "shapelet", "seasonal", "trend"):
        bundle = synthesize(SynthSpec(kind=kind, count=5, segment_len=12, seed=7))
        rebuilt = np.zeros_like(bundle.test_labels)
        for inj in bundle.meta["injections"]:
            rebuilt[inj["start"]:inj["end"]] = 1
        assert np.array_equal(rebuilt, bundle.test_labels), kind


def test_synthesize_global_point_bound_check():
    spec = SynthSpec(kind="global_point", count=1, noise_std=0.001, seed=9)
    bundle = synthesize(spec)
    clean = synthesize(SynthSpec(kind="global_point", count=0, noise_std=0.001, seed=9)).test
    mean, std = clean.mean(), clean.std()
    t = bundle.meta["injections"][0]["start"]
    assert abs(bundle.test[0, t] - mean) >= 6.0 * std * (1 - 1e-12)
    unlabeled = bundle.test[0, bundle.test_labels == 0]
    assert np.all(np.abs(unlabeled - mean) < 4.0 * std)


def test_synthesize_contextual_point_uses_local_statistics():
    spec = SynthSpec(kind="contextual_point", count=3, noise_std=0.001, seed=13)
    bundle = synthesize(spec)
    clean = synthesize(SynthSpec(kind="contextual_point", count=0, noise_std=0.001, seed=13)).test
    for inj in bundle.meta["injections"]:
        t = inj["start"]
        ctx = clean[0, t - 20:t + 21]
        assert abs(abs(bundle.test[0, t] - ctx.mean()) - 3.0 * ctx.std()) < 1e-9


def test_synthesize_clean_regions_bitwise_outside_influence():
    for kind in ("global_point", "contextual_point", "shapelet", "seasonal", "trend"):
        spec = SynthSpec(kind=kind, count=3, segment_len=15, seed=21)
        bundle = synthesize(spec)
        clean = synthesize(SynthSpec(kind=kind, count=0, segment_len=15, seed=21)).test
        untouched = np.ones(spec.test_len, dtype=bool)
        for inj in bundle.meta["injections"]:
            untouched[inj["start"]:inj["affected_end"]] = False
        assert np.array_equal(bundle.test[:, untouched], clean[:, untouched]), kind
        assert untouched.sum() > 0, kind


def test_synthesize_trend_offset_carried_forward():
    spec = SynthSpec(kind="trend", count=1, segment_len=10, noise_std=0.0, seed=2)
    bundle = synthesize(spec)
    clean = synthesize(SynthSpec(kind="trend", count=0, segment_len=10, noise_std=0.0, seed=2)).test
    inj = bundle.meta["injections"][0]
    drift_total = 2.0 * spec.amplitude  # default magnitude 2.0 spread over the segment
    after = slice(inj["end"], spec.test_len)
    assert np.allclose(bundle.test[:, after] - clean[:, after], drift_total, rtol=0, atol=1e-12)


def test_synthesize_seasonal_matches_frequency_multiplied_oracle():
    spec = SynthSpec(kind="seasonal", count=1, segment_len=30, noise_std=0.0, seed=15)
    bundle = synthesize(spec)
    inj = bundle.meta["injections"][0]
    idx = np.arange(spec.train_len + inj["start"], spec.train_len + inj["end"], dtype=np.float64)
    want = spec.amplitude * np.sin(3.0 * (2.0 * np.pi * idx / spec.period))
    assert np.allclose(bundle.test[0, inj["start"]:inj["end"]], want, rtol=0, atol=1e-12)


def test_synthesize_rejects_excessive_fraction():
    with pytest.raises(ConfigError, match="20%"):
        SynthSpec(kind="trend", count=20, segment_len=30, test_len=1000)


def test_base_signal_is_continuous_across_splits():
    spec = SynthSpec(kind="global_point", count=0, seed=1)
    whole = base_signal(spec, 0, spec.train_len + spec.test_len)
    head = base_signal(spec, 0, spec.train_len)
    tail = base_signal(spec, spec.train_len, spec.test_len)
    assert np.array_equal(whole, np.hstack([head, tail]))


def test_write_bundle_round_trip(tmp_path):
    bundle = synthesize(SynthSpec(kind="trend", count=2, segment_len=12, seed=4))
    paths = write_bundle(bundle, tmp_path / "out")
    back = load_csv(paths["train"], paths["test"], paths["labels"], name=bundle.name)
    assert np.array_equal(back.train, bundle.train)
    assert np.array_equal(back.test, bundle.test)
    assert np.array_equal(back.test_labels, bundle.test_labels)
    sidecar = (tmp_path / "out" / "spec.json").read_text()
    assert '"kind": "trend"' in sidecar
