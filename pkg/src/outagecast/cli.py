"""Command line entry point: clean, select, forecast, backtest, simulate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from .config import ConfigError, RunConfig, load_config, tomllib
from .evaluation import SyntheticSpec, backtest, gen_panel
from .features import build_design_matrix, default_top_weather
from .optimize import OptimizationError
from .panel import HOUR, PanelDataset, load_panel_csv, to_utc_hour, validate_grid, write_panel_csv
from .pipeline import run_all
from .quality import clean_panel
from .selection import (
    SelectionReport,
    explained_variance_csv,
    loadings_csv,
    select_features,
)

log = logging.getLogger("outagecast")

HISTORY_TAIL = 7 * 24


class CliError(Exception):
    pass


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n")
    return path


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(
        input=getattr(args, "input", None),
        output=getattr(args, "out", None),
        seed=getattr(args, "seed", None),
        jobs=getattr(args, "jobs", None),
        selection_report=getattr(args, "selection", None),
        horizons=tuple(args.horizons) if getattr(args, "horizons", None) else None,
        cutoffs=tuple(args.cutoff) if getattr(args, "cutoff", None) else None,
    )


def _load(cfg: RunConfig) -> PanelDataset:
    if not cfg.input:
        raise CliError("no input panel given (use --input or set 'input' in the config)")
    path = Path(cfg.input)
    if not path.is_file():
        raise CliError(f"input file not found: {path}")
    try:
        return load_panel_csv(path, cfg.schema or None)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _load_selection(cfg: RunConfig, panel: PanelDataset):
    if not cfg.selection_report:
        return None
    path = Path(cfg.selection_report)
    try:
        report = SelectionReport.from_dict(json.loads(path.read_text()))
    except OSError as exc:
        raise CliError(f"cannot read selection report {path}: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"invalid selection report {path}: {exc}") from exc
    missing = [f for f in report.kept if f not in panel.weather_names]
    if missing:
        raise CliError(f"{path}: selected feature(s) not in the panel: {', '.join(missing)}")
    return report


def _stamp(ts: pd.Timestamp) -> str:
    return ts.strftime("%Y-%m-%dT%H-%M")


# ---------------------------------------------------------------------------
# subcommands


def cmd_clean(args) -> int:
    cfg = _config(args)
    panel = _load(cfg)
    out = Path(cfg.output)
    validation = validate_grid(panel)
    stamps = list(args.timestamps) if args.timestamps else cfg.repair_timestamps
    cleaned, report = clean_panel(panel, cfg.name_patterns, stamps)
    out.mkdir(parents=True, exist_ok=True)
    write_panel_csv(cleaned, out / "cleaned.csv")
    _write(out / "validation_report.json", validation.to_json())
    _write(out / "cleaning_report.json", report.to_json())
    log.info("cleaned panel: %d counties, %d hours, %d weather features",
             len(cleaned.counties), cleaned.n_hours, len(cleaned.weather_names))
    return 0


def cmd_select(args) -> int:
    cfg = _config(args)
    panel = _load(cfg)
    out = Path(cfg.output)
    report = select_features(panel, cfg.selection)
    _write(out / "selection_report.json", report.to_json())
    _write(out / "selection_table.txt", report.table())
    if report.pca is not None:
        _write(out / "pca_loadings.csv", loadings_csv(report.pca))
        _write(out / "pca_explained_variance.csv", explained_variance_csv(report.pca))
        if args.plots:
            from .plotting import explained_variance_figure, loadings_figure

            explained_variance_figure(out / "pca_explained_variance.svg", report.pca)
            loadings_figure(out / "pca_loadings.svg", report.pca)
    if not report.kmeans_converged:
        log.warning("k-means hit its iteration limit")
    log.info("kept %d of %d features", len(report.kept), len(panel.weather_names))
    return 0


def cmd_forecast(args) -> int:
    cfg = _config(args)
    panel = _load(cfg)
    selection = _load_selection(cfg, panel)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    fc = run_all(panel, cfg.horizons, cfg.forecast_config(), selection, cfg.jobs)
    fc.to_csv(out / "forecasts.csv")
    if cfg.aggregate:
        fc.statewide_frame().to_csv(out / "statewide.csv", index=False, float_format="%.10g",
                                    lineterminator="\n")
    _write(out / "model_audit.json", fc.audit_json())
    if args.dump_design:
        sel = selection if selection is not None else list(panel.weather_names)
        top = list(cfg.top_weather) if cfg.top_weather else default_top_weather(sel)
        (out / "design").mkdir(exist_ok=True)
        for c in panel.counties:
            X = build_design_matrix(panel, c, sel, cfg.lags, top)
            X.to_frame().to_csv(out / "design" / f"{c}.csv", index=False, float_format="%.10g",
                                lineterminator="\n")
    if args.plots:
        from .plotting import forecast_figure

        hist = panel.time.to_pandas()[-HISTORY_TAIL:]
        for c in panel.counties:
            ci = panel.county_index(c)
            for h in cfg.horizons:
                times = pd.date_range(fc.origin, periods=h, freq="h")
                forecast_figure(out / f"{c}_{h}.svg", times, fc.predictions[(c, h)],
                                history_times=hist, history=panel.outages[ci, -HISTORY_TAIL:],
                                title=f"{c}, {h} h forecast")
    levels = pd.Series([m.level for m in fc.models.values()]).value_counts().to_dict()
    log.info("fitted %d models: %s", len(fc.models), levels)
    return 0


def cmd_backtest(args) -> int:
    cfg = _config(args)
    panel = _load(cfg)
    selection = _load_selection(cfg, panel)
    out = Path(cfg.output)
    cutoffs = list(cfg.cutoffs) or [panel.time.start + (panel.n_hours - max(cfg.horizons)) * HOUR]
    result = backtest(panel, cutoffs, cfg.horizons, cfg.forecast_config(), selection, cfg.jobs)
    _write(out / "scores.json", result.to_json())
    _write(out / "scores.txt", result.table())
    result.forecasts.to_csv(out / "backtest_forecasts.csv", index=False, float_format="%.10g",
                            lineterminator="\n")
    if args.plots:
        from .plotting import forecast_figure

        multi = len(cutoffs) > 1
        for (cut, c, h), g in result.forecasts.groupby(["cutoff", "county", "horizon"], sort=False):
            name = f"{c}_{h}" + (f"_{_stamp(to_utc_hour(cut))}" if multi else "")
            times = pd.to_datetime(g["timestamp"], utc=True)
            forecast_figure(out / f"{name}.svg", times, g["prediction"].to_numpy(),
                            actual=g["actual"].to_numpy(), title=f"{c}, {h} h from {cut}")
    print(result.table())
    return 0


def cmd_simulate(args) -> int:
    path = Path(args.spec)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise CliError(f"cannot read simulation spec {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"invalid TOML in {path}: {exc}") from exc
    data = data.get("simulate", data)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from exc
    target = Path(args.out or "synthetic_panel.csv")
    if target.suffix.lower() != ".csv":
        target = target / "synthetic_panel.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_panel_csv(gen_panel(spec), target)
    log.info("wrote %s", target)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="outagecast", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False, plots=False):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--input", help="long-format panel CSV")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed")
        if jobs:
            p.add_argument("--jobs", type=int, help="worker threads")
            p.add_argument("--horizons", type=int, nargs="+", help="forecast horizons in hours")
            p.add_argument("--selection", help="selection_report.json from 'select'")
        if plots:
            p.add_argument("--plots", action="store_true", help="render SVG figures")
        return p

    p = common(sub.add_parser("clean", help="validate and clean a raw panel"))
    p.add_argument("--timestamps", nargs="+", help="hours to repair instead of auto-detection")
    p.set_defaults(func=cmd_clean)

    common(sub.add_parser("select", help="cluster and PCA feature selection"),
           plots=True).set_defaults(func=cmd_select)

    p = common(sub.add_parser("forecast", help="fit every county and forecast"), jobs=True, plots=True)
    p.add_argument("--dump-design", action="store_true", help="write per-county design matrices")
    p.set_defaults(func=cmd_forecast)

    p = common(sub.add_parser("backtest", help="score forecasts against held-out hours"),
               jobs=True, plots=True)
    p.add_argument("--cutoff", nargs="+", help="forecast origin timestamp(s)")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("simulate", help="write a synthetic panel from a TOML spec")
    p.add_argument("spec", help="TOML file with SyntheticSpec fields")
    p.add_argument("--out", help="CSV path or directory")
    p.add_argument("--seed", type=int, help="random seed")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError) as exc:
        msg = str(exc)
    except (ValueError, OptimizationError, OSError) as exc:
        msg = f"{type(exc).__name__}: {exc}"
    print(f"outagecast {args.command}: error: {msg}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
