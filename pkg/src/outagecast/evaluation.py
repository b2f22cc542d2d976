"""Scoring against the predict-all-zeros baseline, rolling-origin
backtests and synthetic panels for desk-scale checks."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .panel import FeatureMeta, PanelDataset, TimeIndex, split_at, to_utc_hour, weather_category
from .pipeline import ForecastConfig, run_all


class EvaluationError(ValueError):
    pass


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, float).ravel()
    actual = np.asarray(actual, float).ravel()
    if pred.size == 0:
        raise EvaluationError("rmse of an empty series")
    if pred.shape != actual.shape:
        raise EvaluationError(f"length mismatch: {pred.size} predictions, {actual.size} actuals")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(actual))):
        raise EvaluationError("rmse needs finite values")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def zero_baseline(actual) -> float:
    actual = np.asarray(actual, float).ravel()
    if actual.size == 0:
        raise EvaluationError("baseline of an empty series")
    return rmse(np.zeros_like(actual), actual)


def improvement_pct(baseline_rmse: float, model_rmse: float) -> float:
    if not baseline_rmse > 0:
        return math.nan
    return 100.0 * (baseline_rmse - model_rmse) / baseline_rmse


@dataclass
class ScoreReport:
    method_name: str
    rmse: float
    baseline_rmse: float
    improvement_pct: float
    horizon: int | None = None  # None: pooled over horizons
    cutoff: str | None = None  # None: pooled over cutoffs
    per_county: dict[str, float] = field(default_factory=dict)
    baseline_per_county: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["improvement_pct"]):
            d["improvement_pct"] = None
        return d


def _fmt_pct(value: float) -> str:
    return "-" if value is None or not math.isfinite(value) else f"{value:.1f}%"


def score_table(reports: Sequence[ScoreReport]) -> str:
    """Method / RMSE / Improvement table, one block per horizon setting."""
    out = []
    blocks: dict[tuple, list[ScoreReport]] = {}
    for r in reports:
        blocks.setdefault((r.cutoff, r.horizon), []).append(r)
    for (cutoff, horizon), rows in blocks.items():
        label = "all horizons" if horizon is None else f"{horizon}h"
        where = "all cutoffs" if cutoff is None else f"cutoff {cutoff}"
        out.append(f"# {label}, {where}")
        entries = [("Baseline (predict all zeros)", rows[0].baseline_rmse, "-")]
        entries += [(r.method_name, r.rmse, _fmt_pct(r.improvement_pct)) for r in rows]
        w = max(len(e[0]) for e in entries)
        out.append(f"{'Method':<{w}}  {'RMSE':>10}  {'Improvement':>11}")
        for name, value, imp in entries:
            out.append(f"{name:<{w}}  {value:>10.1f}  {imp:>11}")
        out.append("")
    return "\n".join(out)


@dataclass
class BacktestResult:
    reports: list[ScoreReport]
    forecasts: pd.DataFrame  # cutoff, county, horizon, step, timestamp, prediction, actual

    def to_json(self) -> str:
        return json.dumps([r.to_dict() for r in self.reports], indent=2)

    def table(self) -> str:
        return score_table(self.reports)


Forecaster = Callable[[PanelDataset, Sequence[int]], dict[tuple[str, int], np.ndarray]]


def pipeline_forecaster(config: ForecastConfig = ForecastConfig(), selection=None, jobs: int = 1) -> Forecaster:
    def forecaster(train: PanelDataset, horizons):
        return run_all(train, horizons, config, selection, jobs).predictions

    return forecaster


def _pool(method, preds, actuals, counties, horizon, cutoff) -> ScoreReport:
    """Score the entries keyed (cutoff, county, horizon) matching the filters."""
    keys = [k for k in preds
            if (cutoff is None or k[0] == cutoff) and (horizon is None or k[2] == horizon)]
    cat = lambda d, ks: np.concatenate([d[k] for k in ks])  # noqa: E731
    model, base = rmse(cat(preds, keys), cat(actuals, keys)), zero_baseline(cat(actuals, keys))
    report = ScoreReport(method, model, base, improvement_pct(base, model), horizon, cutoff)
    for c in counties:
        ck = [k for k in keys if k[1] == c]
        report.per_county[c] = rmse(cat(preds, ck), cat(actuals, ck))
        report.baseline_per_county[c] = zero_baseline(cat(actuals, ck))
    return report


def backtest(
    panel: PanelDataset,
    cutoffs: Sequence,
    horizons: Sequence[int] = (24, 48),
    config: ForecastConfig = ForecastConfig(),
    selection=None,
    jobs: int = 1,
    forecaster: Forecaster | None = None,
    method_name: str = "SARIMAX",
    min_train: int = 48,
) -> BacktestResult:
    """Train on [start, cutoff), forecast each horizon, score on the hours
    that follow.

    Scores are pooled over counties and steps, once per horizon and once
    over all horizons.  With several cutoffs, rows pooled over every cutoff
    are appended.
    """
    horizons = tuple(int(h) for h in horizons)
    if not cutoffs:
        raise EvaluationError("at least one cutoff is required")
    forecaster = forecaster or pipeline_forecaster(config, selection, jobs)
    preds_all: dict[tuple[str, str, int], np.ndarray] = {}
    actuals_all: dict[tuple[str, str, int], np.ndarray] = {}
    labels, frames = [], []
    for cutoff in cutoffs:
        ts = to_utc_hour(cutoff)
        i = int((ts - panel.time.start) / pd.Timedelta(hours=1))
        if i < min_train or i + max(horizons) > panel.n_hours:
            raise EvaluationError(
                f"cutoff {ts} leaves {i} training hours and {panel.n_hours - i} test hours"
            )
        train, test = split_at(panel, ts)
        preds = forecaster(train, horizons)
        label = ts.strftime("%Y-%m-%dT%H:%M:%SZ")
        labels.append(label)
        for c in panel.counties:
            ci = test.county_index(c)
            for h in horizons:
                actual = np.asarray(test.outages[ci, :h])
                if np.isnan(actual).any():
                    raise EvaluationError(f"missing actual outages for {c} after {label}")
                pred = np.asarray(preds[(c, h)], float)
                if pred.shape != (h,):
                    raise EvaluationError(f"forecaster returned shape {pred.shape} for {(c, h)}")
                preds_all[(label, c, h)] = pred
                actuals_all[(label, c, h)] = actual
                stamps = test.time.to_pandas()[:h].strftime("%Y-%m-%dT%H:%M:%SZ")
                frames.append(pd.DataFrame({
                    "cutoff": label, "county": c, "horizon": h, "step": np.arange(1, h + 1),
                    "timestamp": stamps, "prediction": pred, "actual": actual,
                }))
    reports = []
    levels = (*horizons, None) if len(horizons) > 1 else horizons
    groups = [(lab, h) for lab in labels for h in levels]
    if len(labels) > 1:
        groups += [(None, h) for h in levels]
    for lab, h in groups:
        reports.append(_pool(method_name, preds_all, actuals_all, panel.counties, h, lab))
    return BacktestResult(reports, pd.concat(frames, ignore_index=True))


# ---------------------------------------------------------------------------
# synthetic data


def _check_arma(phi, theta, sigma2) -> tuple[np.ndarray, np.ndarray]:
    from .sarimax import _ar_roots_ok

    phi = np.atleast_1d(np.asarray(phi, float))
    theta = np.atleast_1d(np.asarray(theta, float))
    if not sigma2 > 0:
        raise EvaluationError("sigma2 must be positive")
    if not _ar_roots_ok(phi):
        raise EvaluationError("AR parameters are not stationary")
    if not _ar_roots_ok(-theta):
        raise EvaluationError("MA parameters are not invertible")
    return phi, theta


def gen_arma(phi, theta, sigma2: float, T: int, seed: int | None = 0, burn_in: int = 500) -> np.ndarray:
    """Simulate ``(1 - sum phi B^i) y = (1 + sum theta B^j) eps``."""
    phi, theta = _check_arma(phi, theta, sigma2)
    if T < 1:
        raise EvaluationError("T must be >= 1")
    rng = np.random.default_rng(seed)
    eps = rng.normal(scale=math.sqrt(sigma2), size=T + burn_in)
    y = lfilter(np.r_[1.0, theta], np.r_[1.0, -phi], eps)
    return y[burn_in:]


@dataclass(frozen=True)
class SyntheticSpec:
    counties: int = 10
    hours: int = 2000
    phi: float = 0.6
    theta: float = 0.2
    sigma2: float = 4.0
    weather_drivers: tuple[float, ...] = (6.0, -4.0, 3.0)
    driver_names: tuple[str, ...] = ("t2m", "sdlwrf", "slhtf")
    n_noise_features: int = 3
    diurnal_offset: float = 30.0
    diurnal_amplitude: float = 8.0
    tracked_scale: float = 5.0
    start: str = "2023-04-01T00:00:00Z"
    seed: int = 0

    def __post_init__(self):
        if not abs(self.phi) < 1 or not abs(self.theta) < 1:
            raise EvaluationError("need |phi| < 1 and |theta| < 1")
        if not self.sigma2 >= 0:
            raise EvaluationError("sigma2 must be non-negative")
        if self.counties < 1:
            raise EvaluationError("need at least one county")
        if self.hours <= 48:
            raise EvaluationError("hours must exceed twice the largest default lag (48)")
        if len(self.driver_names) < len(self.weather_drivers):
            raise EvaluationError("every weather driver needs a name")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        data = dict(data)
        for key in ("weather_drivers", "driver_names"):
            if key in data:
                data[key] = tuple(data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise EvaluationError(f"unknown synthetic spec field(s): {', '.join(sorted(unknown))}")
        return cls(**data)


def _smooth_walk(rng: np.random.Generator, n: int, width: int = 12) -> np.ndarray:
    walk = np.cumsum(rng.normal(size=n + width))
    smooth = np.convolve(walk, np.ones(width) / width, mode="valid")[:n]
    sd = smooth.std()
    return (smooth - smooth.mean()) / (sd if sd > 0 else 1.0)


def gen_panel(spec: SyntheticSpec) -> PanelDataset:
    """Synthetic counties: outages = max(0, round(beta . drivers + diurnal + ARMA noise)).

    Drivers are standardized smoothed random walks; noise features are
    independent walks with no effect on outages.  Tracked counts are a
    scaled, noisy copy of outages.
    """
    rng = np.random.default_rng(spec.seed)
    n_t, n_c = spec.hours, spec.counties
    names = list(spec.driver_names[: len(spec.weather_drivers)])
    names += [f"noise_{i + 1}" for i in range(spec.n_noise_features)]
    start = to_utc_hour(spec.start)
    hours = (start.hour + np.arange(n_t)) % 24
    diurnal = spec.diurnal_offset + spec.diurnal_amplitude * np.sin(2 * np.pi * hours / 24)
    beta = np.asarray(spec.weather_drivers, float)
    outages = np.empty((n_c, n_t))
    tracked = np.empty((n_c, n_t))
    weather = np.empty((n_c, n_t, len(names)))
    for c in range(n_c):
        crng = np.random.default_rng(rng.integers(2**63))
        for j in range(len(names)):
            weather[c, :, j] = _smooth_walk(crng, n_t)
        signal = diurnal + weather[c, :, : len(beta)] @ beta
        if spec.sigma2 > 0:
            signal = signal + gen_arma(spec.phi, spec.theta, spec.sigma2, n_t, crng.integers(2**63))
        outages[c] = np.maximum(0.0, np.round(signal))
        noisy = spec.tracked_scale * outages[c] + crng.normal(scale=spec.tracked_scale, size=n_t)
        tracked[c] = np.maximum(0.0, np.round(noisy))
    meta = tuple(FeatureMeta(n, "weather", weather_category(n)) for n in names)
    width = len(str(n_c))
    counties = tuple(f"county_{c + 1:0{width}d}" for c in range(n_c))
    return PanelDataset(TimeIndex(start, n_t), counties, outages, tracked, weather, meta)
