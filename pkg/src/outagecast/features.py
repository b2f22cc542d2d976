"""Exogenous design matrix: hour-of-day embedding plus lagged outages,
tracked counts and weather."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .panel import PanelDataset, TimeIndex


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class TemporalEmbedding:
    sin_h: float
    cos_h: float


def _snap(v: float) -> float:
    return 0.0 if abs(v) < 1e-15 else v


def temporal_embedding(hour: int) -> TemporalEmbedding:
    """Position of ``hour`` on the 24-hour circle as (sin, cos)."""
    if isinstance(hour, bool) or int(hour) != hour or not 0 <= hour <= 23:
        raise FeatureError(f"hour must be an integer in 0..23, got {hour!r}")
    angle = 2 * math.pi * int(hour) / 24
    return TemporalEmbedding(_snap(math.sin(angle)), _snap(math.cos(angle)))


_EMBED_TABLE = np.array(
    [(e.sin_h, e.cos_h) for e in map(temporal_embedding, range(24))]
)


def embed_hours(hours: np.ndarray) -> np.ndarray:
    """Vectorized :func:`temporal_embedding`; returns shape (n, 2)."""
    return _EMBED_TABLE[np.asarray(hours, dtype=int) % 24]


LAG_SOURCES = ("outage", "tracked", "weather")


@dataclass(frozen=True)
class LagSpec:
    """Lags for one source.  ``feature=None`` on a weather spec means "the
    top weather features" resolved at build time."""

    source: str
    lags: tuple[int, ...]
    feature: str | None = None

    def __post_init__(self):
        lags = tuple(int(k) for k in self.lags)
        if self.source not in LAG_SOURCES:
            raise FeatureError(f"unknown lag source {self.source!r}")
        if not lags or any(k <= 0 for k in lags):
            raise FeatureError("lags must be positive integers")
        if list(lags) != sorted(set(lags)):
            raise FeatureError("lags must be sorted ascending without duplicates")
        object.__setattr__(self, "lags", lags)


DEFAULT_LAGS = (
    LagSpec("outage", (1, 24)),
    LagSpec("tracked", (1, 24)),
    LagSpec("weather", (1, 6)),
)

# longer multi-scale lag set, opt-in via config
EXTENDED_LAGS = (
    LagSpec("outage", (1, 2, 3, 6, 12, 24)),
    LagSpec("tracked", (1, 2, 3, 6, 12, 24)),
    LagSpec("weather", (1, 2, 3, 6, 12, 24)),
)


def add_lags(series: Sequence[float], lags: Sequence[int] | LagSpec) -> np.ndarray:
    """Shifted copies of ``series``, one column per lag; NaN where undefined."""
    if isinstance(lags, LagSpec):
        lags = lags.lags
    x = np.asarray(series, dtype=float)
    max_lag = max(lags)
    if len(x) <= max_lag:
        raise FeatureError(f"series of length {len(x)} is too short for lag {max_lag}")
    out = np.full((len(x), len(lags)), np.nan)
    for j, k in enumerate(lags):
        out[k:, j] = x[:-k]
    return out


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    source: str  # "weather", "outages", "tracked", "hour_sin", "hour_cos"
    feature: str | None = None
    lag: int = 0

    @property
    def series_key(self) -> str | None:
        if self.source == "weather":
            return self.feature
        if self.source in ("outages", "tracked"):
            return self.source
        return None


def design_columns(
    weather_features: Sequence[str],
    lag_config: Sequence[LagSpec] = DEFAULT_LAGS,
    top_weather: Sequence[str] = (),
) -> list[ColumnSpec]:
    cols = [ColumnSpec(f, "weather", f) for f in weather_features]
    cols += [ColumnSpec("hour_sin", "hour_sin"), ColumnSpec("hour_cos", "hour_cos")]
    for spec in lag_config:
        if spec.source == "outage":
            cols += [ColumnSpec(f"outages_lag{k}", "outages", lag=k) for k in spec.lags]
        elif spec.source == "tracked":
            cols += [ColumnSpec(f"tracked_lag{k}", "tracked", lag=k) for k in spec.lags]
        else:
            targets = [spec.feature] if spec.feature else list(top_weather)
            for f in targets:
                cols += [ColumnSpec(f"{f}_lag{k}", "weather", f, lag=k) for k in spec.lags]
    names = [c.name for c in cols]
    if len(set(names)) != len(names):
        raise FeatureError("duplicate design column names")
    return cols


def evaluate_columns(
    columns: Sequence[ColumnSpec],
    series: Mapping[str, np.ndarray],
    hours: np.ndarray,
    rows: np.ndarray,
) -> np.ndarray:
    """Column values at grid positions ``rows``.

    ``series`` maps ``outages``, ``tracked`` and weather names to 1-D arrays
    on a common grid; ``hours`` is the hour of day on that grid.
    """
    rows = np.asarray(rows, dtype=int)
    out = np.empty((len(rows), len(columns)))
    for j, col in enumerate(columns):
        if col.source == "hour_sin":
            out[:, j] = embed_hours(hours[rows])[:, 0]
        elif col.source == "hour_cos":
            out[:, j] = embed_hours(hours[rows])[:, 1]
        else:
            src = rows - col.lag
            if np.any(src < 0):
                raise FeatureError(f"column {col.name} needs data before the grid start")
            out[:, j] = series[col.series_key][src]
    return out


@dataclass(frozen=True)
class DesignMatrix:
    columns: tuple[str, ...]
    values: np.ndarray
    target: np.ndarray | None
    time: TimeIndex | None = None
    specs: tuple[ColumnSpec, ...] = field(default=())

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, names: Sequence[str]) -> "DesignMatrix":
        idx = [self.columns.index(n) for n in names]
        specs = tuple(self.specs[i] for i in idx) if self.specs else ()
        return DesignMatrix(tuple(names), self.values[:, idx], self.target, self.time, specs)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=list(self.columns))
        if self.time is not None:
            frame.insert(0, "timestamp", self.time.to_pandas())
        if self.target is not None:
            frame["target"] = self.target
        return frame


def county_series(panel: PanelDataset, county: str) -> dict[str, np.ndarray]:
    ci = panel.county_index(county)
    series = {"outages": np.asarray(panel.outages[ci]), "tracked": np.asarray(panel.tracked[ci])}
    for j, name in enumerate(panel.weather_names):
        series[name] = np.asarray(panel.weather[ci, :, j])
    return series


def default_top_weather(selection, n: int = 3) -> list[str]:
    """PCA-picked features from a selection report, else its first ``n``."""
    if hasattr(selection, "pca_kept"):
        picks = selection.pca_kept()
        if picks:
            return picks[:n]
        return list(selection.kept)[:n]
    return list(selection)[:n]


def build_design_matrix(
    panel: PanelDataset,
    county: str,
    selection,
    lag_config: Sequence[LagSpec] = DEFAULT_LAGS,
    top_weather: Sequence[str] | None = None,
) -> DesignMatrix:
    """Design matrix for one county.

    ``selection`` is a :class:`~outagecast.selection.SelectionReport` or a
    plain list of weather feature names.  Rows whose lags reach before the
    start of the panel are dropped.
    """
    features = list(selection.kept) if hasattr(selection, "kept") else list(selection)
    if not features:
        raise FeatureError("empty feature set: no weather features selected")
    if top_weather is None:
        top_weather = default_top_weather(selection)
    columns = design_columns(features, lag_config, top_weather)
    series = county_series(panel, county)
    for col in columns:
        key = col.series_key
        if key is not None and key not in series:
            raise FeatureError(f"feature {key!r} not in panel")
    max_lag = max((c.lag for c in columns), default=0)
    n = panel.n_hours
    if n <= max_lag:
        raise FeatureError(f"series of length {n} is too short for lag {max_lag}")
    rows = np.arange(max_lag, n)
    values = evaluate_columns(columns, series, panel.time.hours(), rows)
    target = series["outages"][rows]
    if np.isnan(values).any() or np.isnan(target).any():
        raise FeatureError(f"county {county!r} has missing cells; clean the panel first")
    return DesignMatrix(
        tuple(c.name for c in columns), values, target,
        panel.time.shifted(max_lag, n - max_lag), tuple(columns),
    )
