"""First-pass cleaning: constant and unnamed feature removal, gap filling,
and repair of hours where every weather reading was recorded as zero."""

from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .panel import PanelDataset, PanelError, _runs, to_utc_hour

DEFAULT_NAME_PATTERNS = ("unknown*",)


class CleaningError(PanelError):
    pass


@dataclass
class CleaningReport:
    dropped_zero_variance: list[str] = field(default_factory=list)
    dropped_by_name: list[str] = field(default_factory=list)
    imputed_cells: list[tuple[str, pd.Timestamp, str]] = field(default_factory=list)
    repaired_timestamps: list[pd.Timestamp] = field(default_factory=list)

    def merge(self, other: "CleaningReport") -> "CleaningReport":
        return CleaningReport(
            self.dropped_zero_variance + other.dropped_zero_variance,
            self.dropped_by_name + other.dropped_by_name,
            self.imputed_cells + other.imputed_cells,
            self.repaired_timestamps + other.repaired_timestamps,
        )

    @property
    def empty(self) -> bool:
        return not (
            self.dropped_zero_variance
            or self.dropped_by_name
            or self.imputed_cells
            or self.repaired_timestamps
        )

    def to_dict(self) -> dict:
        iso = lambda ts: ts.strftime("%Y-%m-%dT%H:%M:%SZ")  # noqa: E731
        return {
            "dropped_zero_variance": list(self.dropped_zero_variance),
            "dropped_by_name": list(self.dropped_by_name),
            "imputed_cells": [
                {"county": c, "timestamp": iso(t), "column": col}
                for c, t, col in self.imputed_cells
            ],
            "repaired_timestamps": [iso(t) for t in self.repaired_timestamps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _drop(panel: PanelDataset, names: Sequence[str]) -> PanelDataset:
    keep = [n for n in panel.weather_names if n not in set(names)]
    return panel.select_features(keep)


def drop_zero_variance(panel: PanelDataset) -> tuple[PanelDataset, CleaningReport]:
    """Remove weather features that are constant over every county and hour.

    Constancy is exact (max == min over present cells); a feature with no
    present cells at all is also dropped.
    """
    if not panel.weather_names:
        raise CleaningError("panel has no weather features")
    dropped = []
    for j, name in enumerate(panel.weather_names):
        col = panel.weather[:, :, j]
        col = col[~np.isnan(col)]
        if col.size == 0 or col.max() == col.min():
            dropped.append(name)
    if len(dropped) == len(panel.weather_names):
        raise CleaningError("every weather feature has zero variance; nothing left to model")
    return _drop(panel, dropped), CleaningReport(dropped_zero_variance=dropped)


def drop_by_name(
    panel: PanelDataset, patterns: Iterable[str] = DEFAULT_NAME_PATTERNS
) -> tuple[PanelDataset, CleaningReport]:
    """Remove features whose name matches any pattern.

    Patterns are shell-style globs, so ``unknown*`` is a prefix match and a
    plain name is an exact match.
    """
    patterns = list(patterns)
    if not patterns:
        raise CleaningError("at least one name pattern is required")
    dropped = [
        n for n in panel.weather_names if any(fnmatch.fnmatchcase(n, p) for p in patterns)
    ]
    return _drop(panel, dropped), CleaningReport(dropped_by_name=dropped)


def fill_series(x: np.ndarray) -> np.ndarray:
    """Fill NaNs: interior singles get the neighbour mean, interior runs are
    linearly interpolated, leading/trailing runs copy the nearest value."""
    x = np.array(x, dtype=float)
    missing = np.isnan(x)
    if missing.all():
        raise CleaningError("series has no observed values")
    n = len(x)
    for start, length in _runs(missing):
        stop = start + length
        if start == 0:
            x[:stop] = x[stop]
        elif stop == n:
            x[start:] = x[start - 1]
        elif length == 1:
            x[start] = (x[start - 1] + x[stop]) / 2
        else:
            a, b = x[start - 1], x[stop]
            k = np.arange(1, length + 1)
            x[start:stop] = a + (b - a) * k / (length + 1)
    return x


def impute_adjacent_mean(panel: PanelDataset, column: str) -> tuple[PanelDataset, CleaningReport]:
    """Fill missing cells of one column (``outages``, ``tracked`` or a weather
    feature) county by county using :func:`fill_series`."""
    values = np.array(panel.column(column))
    report = CleaningReport()
    for ci, county in enumerate(panel.counties):
        row = values[ci]
        missing = np.isnan(row)
        if not missing.any():
            continue
        if missing.all():
            raise CleaningError(f"column {column!r} is entirely missing for county {county!r}")
        values[ci] = fill_series(row)
        report.imputed_cells.extend(
            (county, panel.time.timestamp(int(t)), column) for t in np.flatnonzero(missing)
        )
    if column in ("outages", "tracked"):
        return panel.with_columns(**{column: values}), report
    weather = np.array(panel.weather)
    weather[:, :, panel.feature_index(column)] = values
    return panel.with_columns(weather=weather), report


def zero_weather_hours(panel: PanelDataset) -> list[int]:
    """Grid positions where every present weather cell, in every county, is 0."""
    if not panel.weather_names:
        return []
    w = panel.weather
    present = ~np.isnan(w)
    any_present = present.any(axis=(0, 2))
    nonzero = (present & (w != 0.0)).any(axis=(0, 2))
    return [int(t) for t in np.flatnonzero(any_present & ~nonzero)]


def repair_zero_rows(
    panel: PanelDataset, timestamps: Iterable | None = None
) -> tuple[PanelDataset, CleaningReport]:
    """Rebuild weather rows that were recorded as all zeros.

    Each flagged hour is replaced by the mean of its neighbouring hours
    (single interior hour), a linear interpolation across a run of flagged
    hours, or a copy of the single neighbour at the series boundary.
    Outages and tracked counts are left alone.

    If ``timestamps`` is given, exactly those hours are repaired instead of
    the automatically detected ones.
    """
    n = panel.n_hours
    if n < 3:
        raise CleaningError("zero-row repair needs at least 3 timestamps")
    if timestamps is None:
        flagged = zero_weather_hours(panel)
    else:
        flagged = sorted({panel.time.index_of(to_utc_hour(t)) for t in timestamps})
    if not flagged:
        return panel, CleaningReport()
    mask = np.zeros(n, bool)
    mask[flagged] = True
    weather = np.array(panel.weather)
    for start, length in _runs(mask):
        stop = start + length
        at_edge = start == 0 or stop == n
        if at_edge and length >= 2:
            raise CleaningError(
                f"{length} consecutive all-zero hours at the series boundary "
                f"starting {panel.time.timestamp(start)}; no anchor for repair"
            )
        if start == 0:
            weather[:, 0] = weather[:, 1]
        elif stop == n:
            weather[:, n - 1] = weather[:, n - 2]
        elif length == 1:
            weather[:, start] = (weather[:, start - 1] + weather[:, stop]) / 2
        else:
            a, b = weather[:, start - 1], weather[:, stop]
            for k in range(1, length + 1):
                weather[:, start + k - 1] = a + (b - a) * k / (length + 1)
    report = CleaningReport(repaired_timestamps=[panel.time.timestamp(t) for t in flagged])
    return panel.with_columns(weather=weather), report


def clean_panel(
    panel: PanelDataset,
    name_patterns: Iterable[str] = DEFAULT_NAME_PATTERNS,
    repair_timestamps: Iterable | None = None,
) -> tuple[PanelDataset, CleaningReport]:
    """Run the whole first-pass chain and return the cleaned panel."""
    report = CleaningReport()
    for step in (
        drop_zero_variance,
        lambda p: drop_by_name(p, name_patterns),
        lambda p: repair_zero_rows(p, repair_timestamps),
    ):
        panel, part = step(panel)
        report = report.merge(part)
    for column in ["outages", "tracked", *panel.weather_names]:
        if np.isnan(panel.column(column)).any():
            panel, part = impute_adjacent_mean(panel, column)
            report = report.merge(part)
    return panel, report
