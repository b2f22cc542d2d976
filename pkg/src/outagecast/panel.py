"""Hourly multi-county panel: loading, validation and slicing.

The panel is held as dense numpy arrays on one shared hourly grid.
Missing cells are NaN; a county that lacks a source row for some hour
gets NaN cells there rather than its own timeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

HOUR = pd.Timedelta(hours=1)

CANONICAL_COLUMNS = ("timestamp", "county", "outages", "tracked")

FEATURE_KINDS = ("weather", "outage", "tracked", "embedding", "lag")

# Meteorological classes used to group weather parameters in reports.
WEATHER_CATEGORIES: dict[str, tuple[str, ...]] = {
    "Temperature & Humidity": ("t2m", "mstav", "SBT113"),
    "Pressure & Geopotential Heights": ("mslma", "gh_1", "gh_3", "plpl"),
    "Wind & Turbulence": ("u", "v", "u10", "ustm", "vstm", "gust", "wz", "wz_1"),
    "Severe Weather & Instability": ("cape", "cape_1", "cin", "hail_1", "frzr", "refc"),
    "Clouds & Radiation": ("sdswrf", "sulwrf", "sdlwrf", "slhtf", "cfnsf", "vis"),
    "Precipitation & Hydrology": ("sde", "pwat", "cnwat", "pcdb", "fsr", "r"),
    "Land Surface & Vegetation": ("lsm", "veg", "layth", "mdens"),
    "Other/Specialized": ("veril",),
}

_CATEGORY_BY_NAME = {
    name: category for category, names in WEATHER_CATEGORIES.items() for name in names
}


class PanelError(ValueError):
    """Raised for malformed panel input or invalid panel operations."""


def weather_category(name: str) -> str | None:
    return _CATEGORY_BY_NAME.get(name)


def to_utc_hour(value) -> pd.Timestamp:
    """Parse a timestamp, normalize to UTC and reject sub-hour components."""
    ts = pd.Timestamp(value)
    ts = ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")
    if ts != ts.floor("h"):
        raise PanelError(f"timestamp {value!r} is not on the hour")
    return ts


@dataclass(frozen=True)
class TimeIndex:
    start: pd.Timestamp
    length: int

    def __post_init__(self):
        object.__setattr__(self, "start", to_utc_hour(self.start))
        if self.length < 0:
            raise PanelError("TimeIndex length must be non-negative")

    @property
    def end(self) -> pd.Timestamp:
        """Last timestamp on the grid (inclusive)."""
        return self.start + (self.length - 1) * HOUR

    def timestamp(self, i: int) -> pd.Timestamp:
        if not 0 <= i < self.length:
            raise IndexError(f"index {i} outside [0, {self.length})")
        return self.start + int(i) * HOUR

    def index_of(self, ts) -> int:
        ts = to_utc_hour(ts)
        i = int((ts - self.start) / HOUR)
        if not 0 <= i < self.length:
            raise IndexError(f"{ts} outside the time index")
        return i

    def to_pandas(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, periods=self.length, freq="h")

    def hours(self) -> np.ndarray:
        """Hour of day (0..23) for every grid position."""
        return ((self.start.hour + np.arange(self.length)) % 24).astype(int)

    def shifted(self, offset: int, length: int) -> "TimeIndex":
        return TimeIndex(self.start + offset * HOUR, length)


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    kind: str = "weather"
    category: str | None = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise PanelError(f"unknown feature kind {self.kind!r}")
        if self.kind == "weather" and self.category is not None:
            if self.category not in WEATHER_CATEGORIES:
                raise PanelError(f"unknown weather category {self.category!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Aligned (county x hour x column) grid.

    ``outages`` and ``tracked`` have shape (n_counties, n_hours); ``weather``
    has shape (n_counties, n_hours, n_features).  NaN marks a missing cell.
    """

    time: TimeIndex
    counties: tuple[str, ...]
    outages: np.ndarray
    tracked: np.ndarray
    weather: np.ndarray
    feature_meta: tuple[FeatureMeta, ...]
    row_present: np.ndarray | None = None
    duplicates: tuple[tuple[str, pd.Timestamp], ...] = field(default=())

    def __post_init__(self):
        counties = tuple(str(c) for c in self.counties)
        object.__setattr__(self, "counties", counties)
        object.__setattr__(self, "feature_meta", tuple(self.feature_meta))
        if any(not c for c in counties):
            raise PanelError("county identifiers must be non-empty")
        if len(set(counties)) != len(counties):
            raise PanelError("county identifiers must be unique")
        n_c, n_t = len(counties), self.time.length
        outages = _frozen(self.outages)
        tracked = _frozen(self.tracked)
        weather = _frozen(self.weather)
        if weather.ndim == 2 and weather.size == 0:
            weather = _frozen(np.zeros((n_c, n_t, 0)))
        if outages.shape != (n_c, n_t) or tracked.shape != (n_c, n_t):
            raise PanelError("outages/tracked must have shape (counties, hours)")
        if weather.shape[:2] != (n_c, n_t) or weather.ndim != 3:
            raise PanelError("weather must have shape (counties, hours, features)")
        names = [m.name for m in self.feature_meta]
        if len(names) != weather.shape[2] or len(set(names)) != len(names):
            raise PanelError("feature_meta must name every weather column exactly once")
        for label, arr in (("outages", outages), ("tracked", tracked)):
            if np.any(arr[~np.isnan(arr)] < 0):
                raise PanelError(f"{label} must be non-negative")
        present = self.row_present
        present = np.ones((n_c, n_t), bool) if present is None else np.array(present, bool)
        present.setflags(write=False)
        object.__setattr__(self, "outages", outages)
        object.__setattr__(self, "tracked", tracked)
        object.__setattr__(self, "weather", weather)
        object.__setattr__(self, "row_present", present)

    @property
    def weather_names(self) -> list[str]:
        return [m.name for m in self.feature_meta]

    @property
    def n_hours(self) -> int:
        return self.time.length

    def county_index(self, county: str) -> int:
        try:
            return self.counties.index(county)
        except ValueError:
            raise PanelError(f"unknown county {county!r}") from None

    def feature_index(self, name: str) -> int:
        try:
            return self.weather_names.index(name)
        except ValueError:
            raise PanelError(f"unknown weather feature {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        """(counties, hours) view of ``outages``, ``tracked`` or a weather feature."""
        if name == "outages":
            return self.outages
        if name == "tracked":
            return self.tracked
        return self.weather[:, :, self.feature_index(name)]

    def with_columns(self, **arrays) -> "PanelDataset":
        return replace(self, **arrays)

    def select_features(self, names: Iterable[str]) -> "PanelDataset":
        names = list(names)
        idx = [self.feature_index(n) for n in names]
        meta = tuple(self.feature_meta[i] for i in idx)
        return replace(self, weather=self.weather[:, :, idx], feature_meta=meta)

    def select_counties(self, counties: Iterable[str]) -> "PanelDataset":
        idx = [self.county_index(c) for c in counties]
        return replace(
            self,
            counties=tuple(self.counties[i] for i in idx),
            outages=self.outages[idx],
            tracked=self.tracked[idx],
            weather=self.weather[idx],
            row_present=self.row_present[idx],
            duplicates=tuple(d for d in self.duplicates if d[0] in set(self.counties[i] for i in idx)),
        )

    def slice_hours(self, start: int, stop: int) -> "PanelDataset":
        if not 0 <= start <= stop <= self.n_hours:
            raise PanelError(f"hour slice [{start}, {stop}) outside panel")
        return replace(
            self,
            time=self.time.shifted(start, stop - start),
            outages=self.outages[:, start:stop],
            tracked=self.tracked[:, start:stop],
            weather=self.weather[:, start:stop],
            row_present=self.row_present[:, start:stop],
            duplicates=(),
        )

    def to_frame(self) -> pd.DataFrame:
        """Long layout, one row per (timestamp, county) present in the grid."""
        n_c, n_t = len(self.counties), self.n_hours
        ts = np.tile(self.time.to_pandas(), n_c)
        frame = pd.DataFrame(
            {
                "timestamp": ts,
                "county": np.repeat(self.counties, n_t),
                "outages": self.outages.reshape(-1),
                "tracked": self.tracked.reshape(-1),
            }
        )
        for j, name in enumerate(self.weather_names):
            frame[name] = self.weather[:, :, j].reshape(-1)
        frame = frame[self.row_present.reshape(-1)]
        frame = frame.sort_values(["timestamp", "county"], kind="stable")
        return frame.reset_index(drop=True)


def write_panel_csv(panel: PanelDataset, path) -> None:
    frame = panel.to_frame()
    frame["timestamp"] = frame["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%SZ")
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _parse_numeric(values: pd.Series, column: str, nonneg: bool) -> np.ndarray:
    text = values.str.strip()
    empty = text.eq("") | text.str.lower().isin(["nan", "na", "null"])
    out = pd.to_numeric(text.where(~empty), errors="coerce")
    bad = out.isna() & ~empty
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise PanelError(
            f"row {i + 1} (line {i + 2}): non-numeric value {values.iloc[i]!r} in column {column!r}"
        )
    # to_numeric is not correctly rounded; float() is, so re-parse the good cells
    arr = np.array([math.nan if e else float(t) for t, e in zip(text, empty)], dtype=float)
    if nonneg and np.any(arr[~np.isnan(arr)] < 0):
        i = int(np.flatnonzero(arr < 0)[0])
        raise PanelError(f"row {i + 1} (line {i + 2}): negative value in column {column!r}")
    return arr


def load_panel_csv(path, schema: Mapping[str, str] | None = None) -> PanelDataset:
    """Read a long-format CSV into a :class:`PanelDataset`.

    Parameters
    ----------
    path : path-like
        CSV with one row per (timestamp, county).
    schema : mapping, optional
        Maps the canonical names ``timestamp``, ``county``, ``outages`` and
        ``tracked`` to the source column names.  Every other column is a
        weather feature.

    Duplicate (county, timestamp) rows keep their first occurrence and are
    recorded in ``PanelDataset.duplicates`` for :func:`validate_grid`.
    """
    path = Path(path)
    if not path.is_file():
        raise PanelError(f"cannot read panel file {str(path)!r}")
    schema = {c: c for c in CANONICAL_COLUMNS} | dict(schema or {})
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise PanelError(f"cannot read panel file {str(path)!r}: {exc}") from exc
    missing = [schema[c] for c in CANONICAL_COLUMNS if schema[c] not in raw.columns]
    if missing:
        raise PanelError(f"missing mandatory column(s): {', '.join(missing)}")
    source = {schema[c] for c in CANONICAL_COLUMNS}
    feature_names = [c for c in raw.columns if c not in source]

    try:
        stamps = pd.to_datetime(raw[schema["timestamp"]], utc=True, format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise PanelError(f"unparseable timestamp: {exc}") from exc
    off_hour = stamps != stamps.dt.floor("h")
    if off_hour.any():
        i = int(np.flatnonzero(off_hour.to_numpy())[0])
        raise PanelError(f"row {i + 1} (line {i + 2}): timestamp is not on the hour")
    county = raw[schema["county"]].str.strip()
    if county.eq("").any():
        i = int(np.flatnonzero(county.eq("").to_numpy())[0])
        raise PanelError(f"row {i + 1} (line {i + 2}): empty county identifier")

    outages = _parse_numeric(raw[schema["outages"]], schema["outages"], nonneg=True)
    tracked = _parse_numeric(raw[schema["tracked"]], schema["tracked"], nonneg=True)
    weather_cols = [_parse_numeric(raw[c], c, nonneg=False) for c in feature_names]

    if len(raw) == 0:
        raise PanelError("panel file has no data rows")
    start = stamps.min()
    length = int((stamps.max() - start) / HOUR) + 1
    counties = sorted(county.unique())
    c_idx = county.map({c: i for i, c in enumerate(counties)}).to_numpy()
    t_idx = ((stamps - start) / HOUR).astype(int).to_numpy()

    flat = c_idx * length + t_idx
    _, first = np.unique(flat, return_index=True)
    keep = np.zeros(len(raw), bool)
    keep[first] = True
    dup_rows = np.flatnonzero(~keep)
    duplicates = tuple((counties[c_idx[i]], stamps.iloc[i]) for i in dup_rows)

    n_c = len(counties)
    grid = lambda: np.full((n_c, length), np.nan)  # noqa: E731
    out_g, trk_g = grid(), grid()
    out_g[c_idx[keep], t_idx[keep]] = outages[keep]
    trk_g[c_idx[keep], t_idx[keep]] = tracked[keep]
    wx = np.full((n_c, length, len(feature_names)), np.nan)
    for j, col in enumerate(weather_cols):
        wx[c_idx[keep], t_idx[keep], j] = col[keep]
    present = np.zeros((n_c, length), bool)
    present[c_idx[keep], t_idx[keep]] = True
    meta = tuple(FeatureMeta(n, "weather", weather_category(n)) for n in feature_names)
    return PanelDataset(
        time=TimeIndex(start, length),
        counties=tuple(counties),
        outages=out_g,
        tracked=trk_g,
        weather=wx,
        feature_meta=meta,
        row_present=present,
        duplicates=duplicates,
    )


@dataclass(frozen=True)
class Gap:
    county: str
    start: pd.Timestamp
    length: int


@dataclass(frozen=True)
class ValidationReport:
    duplicates: tuple[tuple[str, pd.Timestamp], ...]
    gaps: tuple[Gap, ...]

    @property
    def ok(self) -> bool:
        return not self.duplicates and not self.gaps

    def to_dict(self) -> dict:
        iso = lambda ts: ts.strftime("%Y-%m-%dT%H:%M:%SZ")  # noqa: E731
        return {
            "duplicates": [{"county": c, "timestamp": iso(t)} for c, t in self.duplicates],
            "gaps": [
                {"county": g.county, "start": iso(g.start), "length": g.length}
                for g in self.gaps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of each run of True values."""
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [(int(a), int(b - a)) for a, b in zip(starts, stops)]


def validate_grid(panel: PanelDataset) -> ValidationReport:
    """Report duplicate source rows and per-county hour gaps; never raises."""
    gaps = []
    for ci, county in enumerate(panel.counties):
        for start, length in _runs(~panel.row_present[ci]):
            gaps.append(Gap(county, panel.time.timestamp(start), length))
    return ValidationReport(tuple(panel.duplicates), tuple(gaps))


def split_at(panel: PanelDataset, cutoff) -> tuple[PanelDataset, PanelDataset]:
    """Split into ``[start, cutoff)`` and ``[cutoff, end]``."""
    cutoff = to_utc_hour(cutoff)
    i = (cutoff - panel.time.start) / HOUR
    if not (0 < i < panel.n_hours) or not math.isclose(i, round(i)):
        raise PanelError(f"cutoff {cutoff} must lie strictly inside the time index")
    i = int(round(i))
    return panel.slice_hours(0, i), panel.slice_hours(i, panel.n_hours)


def concat_time(first: PanelDataset, second: PanelDataset) -> PanelDataset:
    """Inverse of :func:`split_at` for two contiguous pieces."""
    if first.counties != second.counties or first.weather_names != second.weather_names:
        raise PanelError("panels disagree on counties or features")
    if first.time.start + first.n_hours * HOUR != second.time.start:
        raise PanelError("panels are not contiguous in time")
    return replace(
        first,
        time=TimeIndex(first.time.start, first.n_hours + second.n_hours),
        outages=np.concatenate([first.outages, second.outages], axis=1),
        tracked=np.concatenate([first.tracked, second.tracked], axis=1),
        weather=np.concatenate([first.weather, second.weather], axis=1),
        row_present=np.concatenate([first.row_present, second.row_present], axis=1),
        duplicates=first.duplicates + second.duplicates,
    )
