
import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from pointpi.data import (
    DataError,
    Normalization,
    SeriesTable,
    SplitSpec,
    SynthConfig,
    build_windows,
    classify_sky,
    clear_sky,
    fill_gaps,
    hour_encoding,
    load_csv,
    sky_label,
    split_dayblocks,
    synth_generate,
    write_csv,
)
from pointpi.metrics import daytime_filter


def _table(n, start="2024-03-01", site="a", seed=0):
    rng = np.random.default_rng(seed)
    ts = pd.date_range(start, periods=n, freq="15min")
    return SeriesTable(pd.DataFrame({
        "timestamp": ts, "site_id": site, "y": rng.uniform(0, 900, n), "ci": rng.uniform(0, 1, n),
        "i_clr": rng.uniform(100, 1000, n), "i_cams": rng.uniform(0, 900, n),
    }))


# csv

def test_one_day_file_has_96_rows(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(synth_generate(SynthConfig(days=1, sites=2)), path)
    table = load_csv(path)
    assert table.frame.groupby("site_id").size().tolist() == [96, 96]


def test_roundtrip_is_lossless(tmp_path):
    table = synth_generate(SynthConfig(days=3, sites=2, seed=4))
    table.frame.loc[5, "ci"] = np.nan
    path = tmp_path / "d.csv"
    write_csv(table, path)
    again = load_csv(path)
    pd.testing.assert_frame_equal(again.frame, table.frame, check_exact=True, check_dtype=False)
    write_csv(again, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == path.read_bytes()


def _write(tmp_path, body):
    path = tmp_path / "x.csv"
    path.write_text("timestamp,site_id,y,ci,i_clr,i_cams\n" + body)
    return path


def test_duplicate_timestamp_names_the_row(tmp_path):
    path = _write(tmp_path, "2024-01-01T00:00:00,s,0,0,0,0\n2024-01-01T00:15:00,s,0,0,0,0\n2024-01-01T00:15:00,s,1,0,0,0\n")
    with pytest.raises(DataError, match="line 4.*duplicate"):
        load_csv(path)


def test_load_errors_carry_line_numbers(tmp_path):
    with pytest.raises(DataError, match="line 3.*off the 15-minute grid"):
        load_csv(_write(tmp_path, "2024-01-01T00:00:00,s,0,0,0,0\n2024-01-01T00:10:00,s,0,0,0,0\n"))
    with pytest.raises(DataError, match="line 2.*non-numeric"):
        load_csv(_write(tmp_path, "2024-01-01T00:00:00,s,abc,0,0,0\n"))
    with pytest.raises(DataError, match="line 2.*timestamp"):
        load_csv(_write(tmp_path, "yesterday,s,1,0,0,0\n"))
    (tmp_path / "m.csv").write_text("timestamp,site_id,y\n2024-01-01T00:00:00,s,1\n")
    with pytest.raises(DataError, match="missing columns"):
        load_csv(tmp_path / "m.csv")


def test_missing_rows_and_empty_fields_become_masked(tmp_path):
    path = _write(tmp_path, "2024-01-01T00:00:00,s,1,0,0,0\n2024-01-01T00:45:00,s,4,0,0,0\n2024-01-01T01:00:00,s,,0,0,0\n")
    table = load_csv(path)
    assert len(table) == 5
    assert table.valid.tolist() == [True, False, False, True, False]


# gaps

def test_single_gap_midpoint():
    t = _table(5)
    t.frame.loc[1, "y"], t.frame.loc[2, "y"], t.frame.loc[3, "y"] = 100.0, np.nan, 200.0
    assert fill_gaps(t).frame.loc[2, "y"] == 150.0


def test_long_gap_stays_masked():
    t = _table(200)
    t.frame.loc[50:50 + 27, "y"] = np.nan  # 28 points = 7 h
    t.frame.loc[120:120 + 23, "ci"] = np.nan  # 24 points = 6 h
    filled = fill_gaps(t, pd.Timedelta(hours=6))
    assert filled.frame.loc[50:77, "y"].isna().all()
    assert filled.frame.loc[120:143, "ci"].notna().all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 24), st.integers(1, 60))
def test_interpolation_within_brackets(seed, gap, start):
    t = _table(100, seed=seed)
    t.frame.loc[start:start + gap - 1, "y"] = np.nan
    left, right = t.frame.loc[start - 1, "y"], t.frame.loc[start + gap, "y"]
    v = fill_gaps(t).frame.loc[start:start + gap - 1, "y"].to_numpy()
    assert np.all(v >= min(left, right) - 1e-12) and np.all(v <= max(left, right) + 1e-12)


def test_leading_gap_is_not_filled():
    t = _table(10)
    t.frame.loc[0:1, "y"] = np.nan
    assert fill_gaps(t).frame.loc[0:1, "y"].isna().all()


# windows

def test_hour_encoding():
    assert hour_encoding(12.0) == 1.0
    assert hour_encoding(0.0) == 0.0
    assert abs(hour_encoding(24.0)) <= 1e-15


def test_window_count_and_contents():
    t = _table(200)
    norm = Normalization(400.0)
    w = build_windows(t, 16, 16, norm)
    assert len(w) == 169
    f = t.frame
    assert_allclose(w.target[3], f["y"].to_numpy()[19:35] / 400.0)
    assert_allclose(w.lag[3, :, 0], f["y"].to_numpy()[3:19] / 400.0)
    assert_allclose(w.lag[3, :, 1], f["ci"].to_numpy()[3:19])
    assert_allclose(w.future[3, :, 0], f["i_clr"].to_numpy()[19:35] / 400.0)
    h = (f["timestamp"].dt.hour + f["timestamp"].dt.minute / 60).to_numpy()
    assert_allclose(w.future[3, :, 2], np.sin(np.pi * h[19:35] / 24))
    assert_array_equal(w.hours[3], h[19:35])


def test_no_window_touches_a_masked_cell_or_time_gap():
    t = _table(300)
    t.frame.loc[[40, 41, 170], "ci"] = np.nan
    w = build_windows(t, 8, 4, Normalization(1.0))
    assert np.all(np.isfinite(w.lag)) and np.all(np.isfinite(w.target))
    # runs: 0..39 (40 pts), 42..169 (128), 171..299 (129)
    assert len(w) == (40 - 11) + (128 - 11) + (129 - 11)
    # dropping a day in the middle creates a gap no window crosses
    f = t.frame.drop(index=range(100, 110))
    w2 = build_windows(SeriesTable(f), 8, 4, Normalization(1.0))
    steps = np.diff(w2.target_time, axis=1).astype("timedelta64[m]").astype(int)
    assert np.all(steps == 15)


def test_windows_are_reproducible():
    t = synth_generate(SynthConfig(days=4, sites=2, seed=2))
    a = build_windows(t, 16, 8, Normalization(800.0))
    b = build_windows(t, 16, 8, Normalization(800.0))
    for k in ("lag", "future", "target", "hours"):
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()


def test_insufficient_data_gives_empty_batch_with_note():
    w = build_windows(_table(10), 8, 4, Normalization(1.0))
    assert len(w) == 0 and w.notes


# sky classes and splits

def test_sky_thresholds():
    assert sky_label(0.95) == "clear"
    assert sky_label(0.55) == "partly_cloudy"
    assert sky_label(0.2) == "cloudy"
    assert sky_label(float("nan")) == "unknown"


def test_clear_regime_is_classified_clear():
    t = synth_generate(SynthConfig(days=60, regime_mix=(1, 0, 0), seed=5))
    labels = classify_sky(t)["label"]
    assert (labels == "clear").mean() >= 0.9


def test_generator_mix_is_recovered():
    t = synth_generate(SynthConfig(days=300, seed=6))
    share = classify_sky(t)["label"].value_counts(normalize=True)
    for name in ("clear", "partly_cloudy", "cloudy"):
        assert abs(share[name] - 1 / 3) <= 0.10


def test_single_day_label_lookup():
    t = synth_generate(SynthConfig(days=2, regime_mix=(0, 0, 1), seed=1))
    assert classify_sky(t, "2023-01-02") == "cloudy"


def test_split_ratios_and_determinism():
    t = synth_generate(SynthConfig(days=100, seed=8))
    a = split_dayblocks(t, SplitSpec(seed=3))
    b = split_dayblocks(t, SplitSpec(seed=3))
    pd.testing.assert_frame_equal(a.manifest, b.manifest)
    counts = a.manifest["split"].value_counts()
    assert abs(counts["train"] - 80) <= 3 and abs(counts["val"] - 10) <= 3 and abs(counts["test"] - 10) <= 3
    for _, g in a.manifest.groupby("label"):
        n = len(g)
        c = g["split"].value_counts()
        for name, ratio in (("train", 0.8), ("val", 0.1), ("test", 0.1)):
            assert abs(c.get(name, 0) - ratio * n) <= 1


def test_splits_are_day_disjoint_and_stratified():
    t = synth_generate(SynthConfig(days=200, sites=2, seed=9))
    sp = split_dayblocks(t, SplitSpec(seed=1))
    days = [set(zip(s.frame["site_id"], s.frame["timestamp"].dt.date)) for s in sp[:3]]
    assert not (days[0] & days[1]) and not (days[0] & days[2]) and not (days[1] & days[2])
    assert sum(len(s) for s in sp[:3]) == len(t)
    overall = sp.manifest["label"].value_counts(normalize=True)
    for name in ("train", "val", "test"):
        share = sp.manifest[sp.manifest["split"] == name]["label"].value_counts(normalize=True)
        for label in overall.index:
            assert abs(share.get(label, 0) - overall[label]) <= 0.05


def test_too_few_days_warns():
    t = synth_generate(SynthConfig(days=4, seed=2))
    with pytest.warns(UserWarning, match="proportions waived"):
        split_dayblocks(t, SplitSpec())


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.3, 0.3)


def test_normalization_uses_training_split_only():
    t = synth_generate(SynthConfig(days=60, seed=3))
    sp = split_dayblocks(t, SplitSpec(seed=0))
    norm = Normalization.fit(sp.train)
    y = sp.train.frame["y"].to_numpy()
    assert norm.r_q == np.quantile(y, 0.95) - np.quantile(y, 0.05)
    w = build_windows(sp.test, 16, 8, norm)
    assert w.r_q == norm.r_q


# generator

def test_generator_invariants():
    cfg = SynthConfig(days=20, sites=2, seed=11)
    t = synth_generate(cfg)
    f = t.frame
    h = f["timestamp"].dt.hour + f["timestamp"].dt.minute / 60
    night = (h <= 6.0) | (h >= 18.5)
    assert (f.loc[night, "y"] == 0.0).all()
    assert (f["y"] <= 1.1 * f["i_clr"] + 1e-9).all()
    assert f["ci"].between(0, 1).all()
    assert (f["i_cams"] >= 0).all()
    assert len(f) == 20 * 96 * 2
    pd.testing.assert_frame_equal(t.frame, synth_generate(cfg).frame)


def test_clear_sky_shape():
    assert clear_sky(12.25, 172) == pytest.approx(1000.0 * 1.12)
    assert clear_sky(5.0, 1) == 0.0 and clear_sky(18.5, 1) == 0.0


def test_threshold_daytime_mode_matches_hours_within_twilight():
    t = synth_generate(SynthConfig(days=10, seed=12))
    f = t.frame
    h = (f["timestamp"].dt.hour + f["timestamp"].dt.minute / 60).to_numpy()
    by_hour = daytime_filter(hours=h)
    by_value = daytime_filter(y=f["y"].to_numpy() / 800.0, threshold=0.001)
    disagree = by_hour != by_value
    # outside the dawn and dusk bands, only fully overcast instants (index clipped to 0) differ
    twilight = (h < 7.0) | (h >= 18.0)
    assert np.all(twilight[disagree] | (f["y"].to_numpy()[disagree] == 0.0))
    assert disagree.mean() < 0.05


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(days=0)
    with pytest.raises(ValueError):
        SynthConfig(regime_mix=(1, 1))
