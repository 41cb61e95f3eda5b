import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapnet.data import (WARMUP, DataError, build_features, chronological_split, date_split,
                         load_csv_dir, ratio_split, raw_features, return_ratio, synth_panel,
                         synth_returns, write_csv_dir)


@pytest.mark.parametrize("prev,cur,expected", [(100, 110, 0.10), (50, 50, 0.0), (50, 45, -0.10)])
def test_return_ratio(prev, cur, expected):
    assert return_ratio(prev, cur) == pytest.approx(expected, abs=1e-15)


def test_return_ratio_rejects_non_positive_price():
    with pytest.raises(DataError):
        return_ratio(0.0, 1.0)


def test_constant_closes_normalize_to_one():
    feats = build_features(np.full((3, 40), 7.5))
    np.testing.assert_array_equal(feats[:, WARMUP:, :], 1.0)


def test_ma5_is_arithmetic_mean():
    closes = np.full((1, 30), 10.0)
    closes[0, -5:] = [1, 2, 3, 4, 5]
    assert raw_features(closes)[0, -1, 1] == 3.0


def test_feature_channel_order():
    closes = np.arange(1.0, 41.0)[None, :]
    f = raw_features(closes)[0, 39]
    assert f.tolist() == [40.0, 38.0, 35.5, 30.5, 25.5]


def test_training_max_of_each_channel_is_one():
    rng = np.random.default_rng(0)
    closes = 50 * np.exp(np.cumsum(rng.normal(0, 0.02, size=(6, 120)), axis=1))
    feats = build_features(closes, train_stop=80)
    np.testing.assert_array_equal(np.nanmax(feats[:, WARMUP:80, :], axis=(0, 1)), 1.0)
    assert np.all(np.isfinite(feats[:, WARMUP:, :]))


def test_short_history_rejected():
    with pytest.raises(DataError):
        build_features(np.ones((2, 29)))


def test_ratio_split_ten_days():
    s = ratio_split(10, (6, 2, 2))
    assert (s.train, s.valid, s.test) == ((0, 6), (6, 8), (8, 10))


def test_overlapping_date_ranges_rejected():
    cal = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(30)]
    with pytest.raises(DataError):
        date_split(cal, {"train": ("2020-01-01", "2020-01-15"),
                         "valid": ("2020-01-10", "2020-01-20"),
                         "test": ("2020-01-21", "2020-01-30")})


def test_date_range_outside_calendar_rejected():
    cal = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(30)]
    with pytest.raises(DataError, match="outside calendar"):
        chronological_split(cal, {"train": ("2019-12-01", "2020-01-10"),
                                  "valid": ("2020-01-11", "2020-01-20"),
                                  "test": ("2020-01-21", "2020-01-30")})


def test_synthetic_noise_free_clusters_are_identical():
    rets, _, labels = synth_returns(12, 50, 3, 0.0, seed=1)
    for c in range(3):
        block = rets[labels == c]
        assert np.all(block == block[0])


def test_synthetic_single_cluster_factor_correlation_is_one():
    _, common, _ = synth_returns(6, 80, 1, 0.8, seed=2)
    corr = np.corrcoef(common)
    np.testing.assert_allclose(corr, 1.0, atol=1e-12)


def test_synthetic_panel_is_deterministic():
    a = synth_panel(10, 80, 2, 0.5, seed=3)
    b = synth_panel(10, 80, 2, 0.5, seed=3)
    assert a.closes.tobytes() == b.closes.tobytes()
    assert np.array_equal(a.features, b.features, equal_nan=True)
    np.testing.assert_allclose(a.closes[:, 0] / (1 + synth_returns(10, 80, 2, 0.5, 3)[0][:, 0]), 100.0)


def test_synthetic_requires_divisible_clusters():
    with pytest.raises(DataError):
        synth_panel(10, 80, 3, 0.5, seed=0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), lookback=st.integers(1, 20))
def test_windows_never_contain_target_day(seed, lookback):
    panel = synth_panel(4, 90, 2, 1.0, seed)
    # plant a marker at the target day; the window must not see it
    for t in panel.target_days("test", lookback) + panel.target_days("train", lookback):
        w = panel.window(t, lookback)
        expected = panel.features[:, t - lookback:t, :]
        assert w.x.shape == (4, lookback, 5)
        np.testing.assert_array_equal(w.x, expected)
        np.testing.assert_allclose(w.target, panel.closes[:, t] / panel.closes[:, t - 1] - 1)
        assert t - lookback >= panel.usable_start


def test_window_does_not_leak_target_day():
    panel = synth_panel(4, 90, 2, 1.0, 0)
    t = 70
    before = panel.window(t, 10).x.copy()
    panel.features[:, t, :] = 1e9
    np.testing.assert_array_equal(panel.window(t, 10).x, before)


def test_csv_roundtrip_and_reproducible_split(tmp_path):
    panel = synth_panel(6, 60, 3, 0.5, seed=4)
    write_csv_dir(panel, tmp_path)
    a = load_csv_dir(tmp_path, (0.6, 0.2, 0.2))
    b = load_csv_dir(tmp_path, (0.6, 0.2, 0.2))
    assert a.tickers == panel.tickers
    np.testing.assert_allclose(a.closes, panel.closes, rtol=1e-15)
    assert a.split == b.split == panel.split


def test_forward_fill_and_exclusion(tmp_path):
    days = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(40)]
    (tmp_path / "tickers.txt").write_text("A\nB\nC\n")
    for name, skip in (("A", set()), ("B", {10, 11, 12}), ("C", set(range(10, 16)))):
        rows = ["date,close"] + [f"{d.isoformat()},{100 + i}" for i, d in enumerate(days) if i not in skip]
        (tmp_path / f"{name}.csv").write_text("\n".join(rows) + "\n")
    panel = load_csv_dir(tmp_path, (0.8, 0.1, 0.1))
    assert panel.tickers == ["A", "B"]  # C has a 6-day gap
    assert panel.closes[1, 10:13].tolist() == [109.0, 109.0, 109.0]
