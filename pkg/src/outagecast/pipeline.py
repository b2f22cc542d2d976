"""Per-county fitting with a four-level fallback chain, recursive
multi-step prediction and statewide aggregation."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from . import sarimax
from .features import (
    DEFAULT_LAGS,
    ColumnSpec,
    DesignMatrix,
    FeatureError,
    LagSpec,
    build_design_matrix,
    county_series,
    default_top_weather,
    evaluate_columns,
)
from .optimize import METHODS, OptimOptions
from .panel import HOUR, PanelDataset
from .sarimax import FitResult, ModelError, ModelOrder
from .selection import correlation_from_array, prune_by_matrix, SelectionError

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
CORRELATION_CEILING = 0.95

LEVELS = ("SARIMAX", "ARIMA_EXOG", "ARIMA", "NAIVE")


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessState:
    kept_columns: tuple[str, ...]
    means: np.ndarray
    sds: np.ndarray
    dropped: tuple[tuple[str, str], ...] = ()
    specs: tuple[ColumnSpec, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kept_columns": list(self.kept_columns),
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "dropped": [{"column": c, "reason": r} for c, r in self.dropped],
        }


def preprocess(
    X: DesignMatrix,
    var_floor: float = VARIANCE_FLOOR,
    corr_ceiling: float = CORRELATION_CEILING,
) -> tuple[DesignMatrix, PreprocessState]:
    """Variance filter, greedy correlation filter (keep first), z-score."""
    if X.n_rows < 2:
        raise PreprocessError("preprocessing needs at least 2 rows")
    values = X.values
    var = values.var(axis=0)
    dropped = [(c, "low-variance") for c, v in zip(X.columns, var) if not v > var_floor]
    live = [i for i, v in enumerate(var) if v > var_floor]
    if not live:
        raise PreprocessError("every design column was dropped")
    R = correlation_from_array(values[:, live], [X.columns[i] for i in live]).entries
    keep_local = prune_by_matrix(R, range(len(live)), corr_ceiling)
    keep = [live[i] for i in keep_local]
    dropped += [(X.columns[i], "correlated") for i in live if i not in keep]
    names = tuple(X.columns[i] for i in keep)
    means = values[:, keep].mean(axis=0)
    sds = values[:, keep].std(axis=0)
    state = PreprocessState(names, means, sds, tuple(dropped), tuple(X.specs))
    return apply_preprocess(X, state), state


def apply_preprocess(X: DesignMatrix, state: PreprocessState) -> DesignMatrix:
    """Replay a fitted :class:`PreprocessState` on new rows (never refits)."""
    missing = [c for c in state.kept_columns if c not in X.columns]
    if missing:
        raise PreprocessError(f"design matrix lacks column(s): {', '.join(missing)}")
    idx = [X.columns.index(c) for c in state.kept_columns]
    values = (X.values[:, idx] - state.means) / state.sds
    specs = tuple(X.specs[i] for i in idx) if X.specs else ()
    return DesignMatrix(state.kept_columns, values, X.target, X.time, specs)


@dataclass
class CountyModel:
    county: str
    level: str
    fit: FitResult | None = None
    naive_mean: float | None = None
    preprocess: PreprocessState | None = None
    attempts: list[tuple[str, bool, str]] = field(default_factory=list)
    intercept: bool = True
    horizon: int | None = None

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown level {self.level!r}")
        if (self.level == "NAIVE") != (self.fit is None):
            raise ValueError("NAIVE models carry a mean, every other level a fit")
        if self.level == "NAIVE" and not (self.naive_mean is not None and self.naive_mean >= 0):
            raise ValueError("naive mean must be a non-negative number")

    @property
    def uses_exog(self) -> bool:
        return self.level in ("SARIMAX", "ARIMA_EXOG")

    def to_dict(self) -> dict:
        return {
            "county": self.county,
            "horizon": self.horizon,
            "level": self.level,
            "attempts": [{"level": lv, "accepted": ok, "reason": why} for lv, ok, why in self.attempts],
            "naive_mean": self.naive_mean,
            "fit": None if self.fit is None else self.fit.to_dict(),
            "preprocess": None if self.preprocess is None else self.preprocess.to_dict(),
        }


def _with_const(X: np.ndarray | None, n: int, intercept: bool) -> np.ndarray:
    X = np.zeros((n, 0)) if X is None else np.asarray(X, float)
    return np.column_stack([np.ones(n), X]) if intercept else X


Fitter = Callable[..., FitResult]


def fit_with_fallback(
    y,
    X: DesignMatrix | np.ndarray | None,
    order: ModelOrder = ModelOrder(),
    opts: OptimOptions = OptimOptions(),
    intercept: bool = True,
    naive_window: int | None = None,
    fitter: Fitter = sarimax.fit,
    county: str = "",
) -> CountyModel:
    """Descend SARIMAX -> ARIMA with exog -> ARIMA -> naive mean.

    A level is accepted only when its fit converged with a finite
    log-likelihood.  ``X`` is the preprocessed exogenous block (or None
    when preprocessing left nothing).  With ``intercept`` a constant column
    is included at every model level.  The naive level always succeeds.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise ValueError("y must be non-empty")
    n = len(y)
    Xv = None if X is None else np.asarray(getattr(X, "values", X), float)
    names = tuple(getattr(X, "columns", ())) if X is not None else ()
    if Xv is not None and not names:
        names = tuple(f"x{i}" for i in range(Xv.shape[1]))
    attempts: list[tuple[str, bool, str]] = []
    plans = [
        ("SARIMAX", order, True),
        ("ARIMA_EXOG", order.non_seasonal(), True),
        ("ARIMA", order.non_seasonal(), False),
    ]
    constant = bool(np.all(np.isfinite(y))) and np.ptp(y) == 0
    for level, lvl_order, with_exog in plans:
        if constant:
            attempts.append((level, False, "constant target"))
            continue
        if with_exog and (Xv is None or Xv.shape[1] == 0):
            attempts.append((level, False, "no exogenous columns"))
            continue
        exog = _with_const(Xv if with_exog else None, n, intercept)
        cols = (("const",) if intercept else ()) + (names if with_exog else ())
        if exog.shape[1] == 0:
            exog = None
        try:
            frame = None if exog is None else DesignMatrix(cols, exog, None)
            result = fitter(y, frame, lvl_order, opts)
        except (ModelError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            attempts.append((level, False, f"error: {exc}"))
            continue
        ok = result.converged and math.isfinite(result.loglik)
        attempts.append((level, ok, "converged" if ok else f"not converged: {result.message}"))
        if ok:
            return CountyModel(county, level, fit=result, attempts=attempts, intercept=intercept)
    window = y[-naive_window:] if naive_window else y
    window = window[np.isfinite(window)]
    mean = float(window.mean()) if window.size else 0.0
    attempts.append(("NAIVE", True, "historical mean"))
    return CountyModel(county, "NAIVE", naive_mean=max(mean, 0.0), attempts=attempts, intercept=intercept)


@dataclass(frozen=True)
class ForecastConfig:
    order: ModelOrder = ModelOrder()
    opts: OptimOptions = OptimOptions()
    lags: tuple[LagSpec, ...] = DEFAULT_LAGS
    top_weather: tuple[str, ...] | None = None
    intercept: bool = True
    naive_window: int | None = None
    aggregate: bool = True
    var_floor: float = VARIANCE_FLOOR
    corr_ceiling: float = CORRELATION_CEILING
    methods: tuple[str, ...] = METHODS


def _extended_series(panel: PanelDataset, county: str, h: int, predictions: Sequence[float]):
    """History plus ``h`` future slots: weather/tracked frozen at their last
    value, outages filled from ``predictions`` and NaN beyond them."""
    hist = county_series(panel, county)
    T = panel.n_hours
    ext = {}
    for key, values in hist.items():
        future = np.full(h, np.nan if key == "outages" else values[-1])
        ext[key] = np.concatenate([values, future])
    m = min(len(predictions), h)
    ext["outages"][T : T + m] = np.asarray(predictions, float)[:m]
    hours = (panel.time.start.hour + np.arange(T + h)) % 24
    return ext, hours


def build_future_exog(
    panel: PanelDataset,
    county: str,
    state: PreprocessState,
    h: int,
    predictions_so_far: Sequence[float] = (),
) -> DesignMatrix:
    """Preprocessed exogenous rows for steps 1..h after the panel ends.

    Lags reaching into history use observed values; outage lags reaching
    into the future use ``predictions_so_far`` and raise
    :class:`FeatureError` if the needed step has not been predicted yet.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    if not state.specs:
        raise PreprocessError("preprocess state carries no column recipe")
    ext, hours = _extended_series(panel, county, h, predictions_so_far)
    T = panel.n_hours
    rows = np.arange(T, T + h)
    raw = evaluate_columns(state.specs, ext, hours, rows)
    if np.isnan(raw).any():
        bad = int(np.flatnonzero(np.isnan(raw).any(axis=1))[0]) + 1
        raise FeatureError(
            f"step {bad} needs an outage prediction that has not been made yet"
        )
    names = tuple(s.name for s in state.specs)
    future = DesignMatrix(names, raw, None, panel.time.shifted(T, h), state.specs)
    return apply_preprocess(future, state)


def fit_county(
    panel: PanelDataset,
    county: str,
    selection,
    config: ForecastConfig = ForecastConfig(),
    horizon: int | None = None,
    fitter: Fitter = sarimax.fit,
) -> CountyModel:
    """Build the design matrix for one county, preprocess and fit."""
    if fitter is sarimax.fit and tuple(config.methods) != METHODS:
        fitter = partial(sarimax.fit, methods=config.methods)
    top = list(config.top_weather) if config.top_weather else default_top_weather(selection)
    dm = build_design_matrix(panel, county, selection, config.lags, top)
    try:
        Xp, state = preprocess(dm, config.var_floor, config.corr_ceiling)
    except (PreprocessError, SelectionError) as exc:
        log.info("county %s: preprocessing left no columns (%s)", county, exc)
        Xp, state = None, None
    model = fit_with_fallback(
        dm.target, Xp, config.order, config.opts, config.intercept,
        config.naive_window, fitter, county,
    )
    model.preprocess = state
    model.horizon = horizon
    if config.naive_window is None and model.level == "NAIVE":
        # naive mean over the full outage history, not only design rows
        hist = county_series(panel, county)["outages"]
        model.naive_mean = max(float(np.nanmean(hist)), 0.0)
    return model


def _fallback_mean(panel: PanelDataset, county: str) -> float:
    hist = county_series(panel, county)["outages"]
    value = float(np.nanmean(hist)) if np.isfinite(hist).any() else 0.0
    return max(value, 0.0)


def predict_county(model: CountyModel, panel: PanelDataset, h: int) -> np.ndarray:
    """Clamped forecasts for steps 1..h after the end of ``panel``.

    Exogenous models are stepped forward one hour at a time so outage lags
    can use earlier predictions.  Any non-finite raw value is replaced by
    the county's historical mean.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    if model.level == "NAIVE":
        return np.full(h, float(model.naive_mean))
    fit = model.fit
    if not model.uses_exog:
        exog = _with_const(None, h, model.intercept)
        raw = sarimax.forecast(fit, h, exog if exog.shape[1] else None)
        out = np.maximum(raw, 0.0)
    else:
        preds: list[float] = []
        for step in range(1, h + 1):
            block = build_future_exog(panel, model.county, model.preprocess, step, preds)
            exog = _with_const(block.values, step, model.intercept)
            raw = sarimax.forecast(fit, step, exog)[-1]
            value = max(float(raw), 0.0) if math.isfinite(raw) else _fallback_mean(panel, model.county)
            preds.append(value)
        out = np.asarray(preds)
    bad = ~np.isfinite(out)
    if bad.any():
        out[bad] = _fallback_mean(panel, model.county)
    return out


@dataclass
class ForecastSet:
    counties: tuple[str, ...]
    horizons: tuple[int, ...]
    origin: pd.Timestamp  # first forecast hour
    predictions: dict[tuple[str, int], np.ndarray]
    models: dict[tuple[str, int], CountyModel] = field(default_factory=dict)

    def statewide(self, horizon: int) -> np.ndarray:
        stack = [self.predictions[(c, horizon)] for c in self.counties]
        return np.array([math.fsum(col) for col in zip(*stack)])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for c in self.counties:
            for h in self.horizons:
                for step, value in enumerate(self.predictions[(c, h)], start=1):
                    ts = self.origin + (step - 1) * HOUR
                    rows.append((c, h, step, ts.strftime("%Y-%m-%dT%H:%M:%SZ"), value))
        return pd.DataFrame(rows, columns=["county", "horizon", "step", "timestamp", "prediction"])

    def statewide_frame(self) -> pd.DataFrame:
        rows = []
        for h in self.horizons:
            for step, value in enumerate(self.statewide(h), start=1):
                ts = self.origin + (step - 1) * HOUR
                rows.append((h, step, ts.strftime("%Y-%m-%dT%H:%M:%SZ"), value))
        return pd.DataFrame(rows, columns=["horizon", "step", "timestamp", "prediction"])

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")

    def audit(self) -> list[dict]:
        return [self.models[(c, h)].to_dict() for c in self.counties for h in self.horizons
                if (c, h) in self.models]

    def audit_json(self) -> str:
        return json.dumps(self.audit(), indent=2, allow_nan=False, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def run_all(
    panel: PanelDataset,
    horizons: Sequence[int] = (24, 48),
    config: ForecastConfig = ForecastConfig(),
    selection=None,
    jobs: int = 1,
    fitter: Fitter = sarimax.fit,
) -> ForecastSet:
    """Independent fit and forecast for every (county, horizon).

    ``selection`` defaults to every weather feature in the panel.  Tasks
    run on a thread pool of ``jobs`` workers; results are keyed by
    (county, horizon) so the worker count never changes the output.
    """
    horizons = tuple(int(h) for h in horizons)
    if not horizons or any(h < 1 for h in horizons):
        raise ValueError("horizons must be positive integers")
    if selection is None:
        selection = list(panel.weather_names)
    tasks = [(c, h) for c in panel.counties for h in horizons]

    def work(task):
        county, h = task
        model = fit_county(panel, county, selection, config, h, fitter)
        return task, model, predict_county(model, panel, h)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]
    predictions = {key: preds for key, _, preds in results}
    models = {key: model for key, model, _ in results}
    origin = panel.time.start + panel.n_hours * HOUR
    return ForecastSet(panel.counties, horizons, origin, predictions, models)
