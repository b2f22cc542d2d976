import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from outagecast.quality import (
    CleaningError,
    clean_panel,
    drop_by_name,
    drop_zero_variance,
    fill_series,
    impute_adjacent_mean,
    repair_zero_rows,
)

from conftest import START, make_panel


def _feature_panel(columns: dict, counties=1):
    names = list(columns)
    arr = np.stack([np.asarray(columns[n], float) for n in names], axis=-1)
    return make_panel(np.repeat(arr[None], counties, axis=0), names=names)


def test_constant_feature_dropped():
    panel = _feature_panel({"const": [5.0, 5.0, 5.0], "x": [1.0, 1.0, 2.0]})
    out, report = drop_zero_variance(panel)
    assert out.weather_names == ["x"]
    assert report.dropped_zero_variance == ["const"]


def test_variance_is_pooled_across_counties():
    w = np.zeros((2, 4, 1))
    w[1] = 1.0  # each county constant, pooled variance > 0
    out, report = drop_zero_variance(make_panel(w, names=["t2m"]))
    assert out.weather_names == ["t2m"] and report.dropped_zero_variance == []


def test_all_features_dropped_is_error():
    with pytest.raises(CleaningError):
        drop_zero_variance(_feature_panel({"a": [1.0, 1.0, 1.0]}))


def test_stage_one_counts_on_109_feature_panel(rng):
    T, names = 60, []
    cols = {}
    for i in range(84):
        cols[f"w{i:02d}"] = rng.normal(size=T)
    for i in range(15):
        cols[f"zero{i:02d}"] = np.zeros(T)
    cols["unknown"] = rng.normal(size=T)
    for i in range(1, 10):
        cols[f"unknown_{i}"] = rng.normal(size=T)
    panel = _feature_panel(cols, counties=2)
    assert len(panel.weather_names) == 109
    step1, r1 = drop_zero_variance(panel)
    assert len(step1.weather_names) == 94
    step2, r2 = drop_by_name(step1, ["unknown*"])
    assert len(r2.dropped_by_name) == 10 and len(step2.weather_names) == 84


def test_drop_by_name_prefix():
    panel = _feature_panel({"unknown": [1, 2, 3], "unknown_1": [1, 2, 4], "t2m": [3, 2, 1]})
    out, report = drop_by_name(panel, ["unknown*"])
    assert out.weather_names == ["t2m"]
    assert report.dropped_by_name == ["unknown", "unknown_1"]


def test_drop_by_name_no_match_is_noop():
    panel = _feature_panel({"t2m": [1, 2, 3]})
    out, report = drop_by_name(panel, ["nothing*"])
    assert out.weather_names == ["t2m"] and report.dropped_by_name == []


def test_drop_by_name_exact():
    panel = _feature_panel({"t2m": [1, 2, 3], "t2m_max": [1, 2, 4]})
    out, _ = drop_by_name(panel, ["t2m"])
    assert out.weather_names == ["t2m_max"]


@pytest.mark.parametrize("series, expected", [
    ([10, np.nan, 20], [10, 15, 20]),
    ([np.nan, 7, 9], [7, 7, 9]),
    ([0, np.nan, np.nan, 30], [0, 10, 20, 30]),
    ([1, 2, np.nan], [1, 2, 2]),
])
def test_fill_series(series, expected):
    np.testing.assert_allclose(fill_series(np.array(series, float)), expected, rtol=0, atol=1e-12)


def test_impute_column_and_report():
    panel = _feature_panel({"t2m": [10, np.nan, 20], "u": [1, 2, 3]})
    out, report = impute_adjacent_mean(panel, "t2m")
    np.testing.assert_array_equal(out.weather[0, :, 0], [10, 15, 20])
    assert report.imputed_cells == [("c0", START + pd.Timedelta(hours=1), "t2m")]


def test_impute_all_missing_names_county():
    w = np.array([[[1.0], [2.0], [3.0]], [[np.nan], [np.nan], [np.nan]]])
    with pytest.raises(CleaningError, match="c1"):
        impute_adjacent_mean(make_panel(w, names=["t2m"]), "t2m")


def test_impute_outages_column():
    out = np.array([[3.0, np.nan, 5.0]])
    panel, _ = impute_adjacent_mean(make_panel(np.ones((1, 3, 1)), outages=out, tracked=out), "outages")
    np.testing.assert_array_equal(panel.outages[0], [3, 4, 5])


def test_repair_zero_row():
    panel = _feature_panel({"a": [3, 0, 5], "b": [4, 0, 6]})
    out, report = repair_zero_rows(panel)
    np.testing.assert_array_equal(out.weather[0, 1], [4, 5])
    assert report.repaired_timestamps == [START + pd.Timedelta(hours=1)]
    np.testing.assert_array_equal(out.outages, panel.outages)


def test_repair_noop_without_zero_rows():
    panel = _feature_panel({"a": [3, 1, 5], "b": [4, 2, 6]})
    out, report = repair_zero_rows(panel)
    assert report.empty and out.weather.tobytes() == panel.weather.tobytes()


def test_partial_zero_not_repaired():
    panel = _feature_panel({"a": [3, 0, 5], "b": [4, 1, 6]})
    _, report = repair_zero_rows(panel)
    assert report.repaired_timestamps == []


def test_zero_in_one_county_only_not_repaired():
    w = np.array([[[3.0], [0.0], [5.0]], [[1.0], [2.0], [3.0]]])
    _, report = repair_zero_rows(make_panel(w))
    assert report.repaired_timestamps == []


def test_boundary_zero_run_is_error():
    panel = _feature_panel({"a": [0, 0, 5, 6], "b": [0, 0, 1, 2]})
    with pytest.raises(CleaningError):
        repair_zero_rows(panel)


def test_single_boundary_zero_copies_neighbour():
    panel = _feature_panel({"a": [3, 4, 0], "b": [1, 2, 0]})
    out, _ = repair_zero_rows(panel)
    np.testing.assert_array_equal(out.weather[0, 2], [4, 2])


def test_explicit_timestamp_list_repairs_only_those():
    panel = _feature_panel({"a": [3, 0, 5, 0, 9], "b": [4, 0, 6, 0, 8]})
    out, report = repair_zero_rows(panel, [START + pd.Timedelta(hours=3)])
    np.testing.assert_array_equal(out.weather[0, 1], [0, 0])
    np.testing.assert_array_equal(out.weather[0, 3], [7, 7])
    assert report.repaired_timestamps == [START + pd.Timedelta(hours=3)]


def _messy_panel(seed):
    rng = np.random.default_rng(seed)
    C, T = 2, 30
    w = rng.normal(size=(C, T, 5))
    w[:, :, 1] = 0.0
    w[:, 7, :] = 0.0
    w[rng.random(w.shape) < 0.05] = np.nan
    w[:, 7, :] = 0.0
    w[:, :, 1] = 0.0
    out = np.floor(rng.exponential(5, size=(C, T)))
    out[0, 3] = np.nan
    return make_panel(w, out, out + 1, names=["t2m", "dead", "unknown_2", "gust", "unknown"])


def test_clean_panel_chain():
    cleaned, report = clean_panel(_messy_panel(3))
    assert cleaned.weather_names == ["t2m", "gust"]
    assert report.dropped_zero_variance == ["dead"]
    assert report.dropped_by_name == ["unknown_2", "unknown"]
    assert report.repaired_timestamps == [START + pd.Timedelta(hours=7)]
    assert not np.isnan(cleaned.weather).any() and not np.isnan(cleaned.outages).any()
    # Stage 1 never drops rows
    assert cleaned.n_hours == 30 and len(cleaned.counties) == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_clean_is_idempotent(seed):
    once, _ = clean_panel(_messy_panel(seed))
    twice, report = clean_panel(once)
    assert report.empty
    assert twice.weather.tobytes() == once.weather.tobytes()
    assert twice.outages.tobytes() == once.outages.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6)), min_size=1, max_size=40))
def test_imputation_never_alters_present_cells(values):
    x = np.array([np.nan if v is None else v for v in values])
    if np.isnan(x).all():
        with pytest.raises(CleaningError):
            fill_series(x)
        return
    filled = fill_series(x)
    present = ~np.isnan(x)
    assert np.array_equal(filled[present], x[present])
    assert not np.isnan(filled).any()
    assert filled.min() >= x[present].min() - 1e-9 and filled.max() <= x[present].max() + 1e-9
